#include "sdt/metrics.hpp"

#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "sdt/error.hpp"
#include "sdt/vae.hpp"

namespace sdt {

std::string MetricsReport::to_json() const {
  nlohmann::json j = {{"l2", l2}, {"lip_error", lip_error}, {"ftd", ftd}, {"n_samples", n_samples}};
  return j.dump() + "\n";
}

namespace {

void check_same_shape(const GestureSequence& a, const GestureSequence& b) {
  if (a.frames != b.frames || a.keypoints() != b.keypoints()) {
    fail_usage("metric inputs differ in shape: (" + std::to_string(a.frames) + ", " +
               std::to_string(a.keypoints()) + ") vs (" + std::to_string(b.frames) + ", " +
               std::to_string(b.keypoints()) + ")");
  }
}

}  // namespace

double l2_distance(const GestureSequence& pred, const GestureSequence& gt) {
  check_same_shape(pred, gt);
  const std::size_t per_frame = static_cast<std::size_t>(pred.keypoints()) * 2;
  double total = 0.0;
  for (int f = 0; f < pred.frames; ++f) {
    double s = 0.0;
    for (std::size_t i = 0; i < per_frame; ++i) {
      const double d = pred.coords[f * per_frame + i] - gt.coords[f * per_frame + i];
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / pred.frames;
}

std::vector<double> lip_distances(const GestureSequence& seq) {
  const int up = seq.layout->lip_upper_center, lo = seq.layout->lip_lower_center;
  std::vector<double> d(static_cast<std::size_t>(seq.frames));
  for (int f = 0; f < seq.frames; ++f) {
    d[f] = std::hypot(seq.at(f, up, 0) - seq.at(f, lo, 0), seq.at(f, up, 1) - seq.at(f, lo, 1));
  }
  return d;
}

double lip_sync_error(const GestureSequence& pred, const GestureSequence& gt) {
  check_same_shape(pred, gt);
  const auto d = lip_distances(pred);
  const auto dhat = lip_distances(gt);
  double max_open = 0.0, err = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    max_open = std::max(max_open, dhat[i]);
    err += std::abs(d[i] - dhat[i]);
  }
  if (!(max_open > 0.0)) {
    fail_data("lip_sync_error: ground-truth mouth never opens (max lip distance is 0)");
  }
  return err / static_cast<double>(d.size()) / max_open;
}

Gaussian fit_gaussian(const std::vector<TemplateVector>& templates) {
  if (templates.size() < 2) fail_usage("fit_gaussian needs at least 2 vectors");
  const auto c = static_cast<Eigen::Index>(templates.front().size());
  const auto n = static_cast<Eigen::Index>(templates.size());
  Eigen::MatrixXd x(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(templates[i].size()) != c) {
      fail_usage("fit_gaussian: vectors differ in dimension");
    }
    for (Eigen::Index j = 0; j < c; ++j) x(i, j) = templates[i][j];
  }
  Gaussian g;
  g.mu = x.colwise().mean().transpose();
  const Eigen::MatrixXd centred = x.rowwise() - g.mu.transpose();
  g.sigma = (centred.transpose() * centred) / static_cast<double>(n);
  g.sigma = 0.5 * (g.sigma + g.sigma.transpose());
  return g;
}

namespace {

// Eigenvalues this close to zero are rounding noise from the solver; their
// square roots would otherwise leak ~1e-8 into traces.
double noise_floor(const Eigen::VectorXd& ev) {
  const double scale = ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0;
  const double eps = std::numeric_limits<double>::epsilon();
  return std::max(1e-10, 4.0 * static_cast<double>(ev.size()) * eps * scale);
}

}  // namespace

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
  if (es.info() != Eigen::Success) fail_numeric("eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  const double tol = noise_floor(ev);
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = ev[i] > tol ? std::sqrt(ev[i]) : 0.0;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

void check_psd(const Eigen::MatrixXd& s, const char* which) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-8 * scale) {
    fail_numeric(std::string("frechet_distance: covariance ") + which +
                 " is not positive semidefinite");
  }
}

}  // namespace

double frechet_distance(const Gaussian& a, const Gaussian& b) {
  if (a.mu.size() != b.mu.size() || a.sigma.rows() != b.sigma.rows()) {
    fail_usage("frechet_distance: dimension mismatch");
  }
  check_psd(a.sigma, "1");
  check_psd(b.sigma, "2");
  if (a.mu == b.mu && a.sigma == b.sigma) return 0.0;
  // tr((S1 S2)^{1/2}) = tr((S1^{1/2} S2 S1^{1/2})^{1/2}); the latter is symmetric PSD.
  const Eigen::MatrixXd r1 = sqrt_psd(a.sigma);
  const Eigen::MatrixXd inner = r1 * b.sigma * r1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double tol = noise_floor(es.eigenvalues());
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev > tol) tr_sqrt += std::sqrt(ev);
  }
  const double d = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

double ftd(const std::vector<GestureSequence>& pred, const std::vector<GestureSequence>& gt,
           GestureVae& vae) {
  if (pred.size() < 2 || gt.size() < 2) fail_usage("ftd needs at least 2 sequences per set");
  return frechet_distance(fit_gaussian(vae.extract_templates(pred)),
                          fit_gaussian(vae.extract_templates(gt)));
}

}  // namespace sdt
