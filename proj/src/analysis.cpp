#include "sdt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "sdt/error.hpp"
#include "sdt/train.hpp"

namespace sdt {

namespace {

// Flip so that the largest-magnitude entry is positive (first index wins ties).
void fix_sign(Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (std::abs(v(i)) > std::abs(v(best))) best = i;
  }
  if (v(best) < 0.0) v = -v;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

PcaResult pca_project(const std::vector<TemplateVector>& vectors, int dims) {
  if (dims < 1) fail_usage("pca dims must be >= 1");
  if (static_cast<int>(vectors.size()) < dims + 1) {
    fail_usage("pca needs at least dims + 1 vectors");
  }
  const auto n = static_cast<Eigen::Index>(vectors.size());
  const auto c = static_cast<Eigen::Index>(vectors.front().size());
  Eigen::MatrixXd x(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(vectors[i].size()) != c) fail_usage("pca vectors differ in length");
    for (Eigen::Index j = 0; j < c; ++j) x(i, j) = vectors[i][j];
  }
  const Eigen::VectorXd mean = x.colwise().mean();
  x.rowwise() -= mean.transpose();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd ev = es.eigenvalues().reverse();
  const Eigen::MatrixXd axes = es.eigenvectors().rowwise().reverse();
  const double total = std::max(0.0, ev.sum());

  PcaResult r;
  r.mean = to_std(mean);
  int rank = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) > 1e-12 * std::max(total, 1e-300)) ++rank;
  }
  r.dims = std::min(dims, rank);
  Eigen::MatrixXd basis(c, r.dims);
  for (int k = 0; k < r.dims; ++k) {
    Eigen::VectorXd a = axes.col(k);
    fix_sign(a);
    basis.col(k) = a;
    r.explained_ratio.push_back(ev(k) / total);
  }
  const Eigen::MatrixXd p = x * basis;
  for (Eigen::Index i = 0; i < n; ++i) r.points.push_back(to_std(p.row(i).transpose()));
  return r;
}

SemanticDirections semantic_directions(const Eigen::MatrixXd& w) {
  if (w.cols() < 1 || w.rows() < 1) fail_usage("factorization needs a non-empty weight");
  const Eigen::MatrixXd g = w.transpose() * w;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
  SemanticDirections d;
  const auto c = g.rows();
  for (Eigen::Index i = c - 1; i >= 0; --i) {
    Eigen::VectorXd v = es.eigenvectors().col(i);
    fix_sign(v);
    d.eigenvalues.push_back(es.eigenvalues()(i));
    d.directions.push_back(to_std(v));
  }
  d.top = d.directions.front();
  d.degenerate = c > 1 && std::abs(d.eigenvalues[0] - d.eigenvalues[1]) <= 1e-9;
  return d;
}

SemanticDirections top_semantic_direction(const GestureVae& vae) {
  if (!vae.frozen()) fail_usage("factorization requires a frozen VAE");
  const Tensor& w = vae.decoder_input_weight();
  Eigen::MatrixXd m(w.dim(0), w.dim(1));
  for (int i = 0; i < w.dim(0); ++i) {
    for (int j = 0; j < w.dim(1); ++j) m(i, j) = w[static_cast<std::size_t>(i) * w.dim(1) + j];
  }
  return semantic_directions(m);
}

namespace {

GestureSequence decode_one(GestureVae& vae, std::span<const double> t) {
  const int c = vae.config().template_dim;
  if (static_cast<int>(t.size()) != c) fail_usage("template dimension does not match the VAE");
  Tensor z({1, c});
  std::copy(t.begin(), t.end(), z.data());
  return GestureSequence::from_channels(vae.layout(), vae.decode(z));
}

}  // namespace

std::pair<GestureSequence, GestureSequence> decode_opposites(GestureVae& vae,
                                                             std::span<const double> direction,
                                                             double magnitude) {
  std::vector<double> pos(direction.begin(), direction.end()), neg = pos;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    pos[i] *= magnitude;
    neg[i] *= -magnitude;
  }
  return {decode_one(vae, pos), decode_one(vae, neg)};
}

double mean_abs_difference(const GestureSequence& a, const GestureSequence& b) {
  if (a.coords.size() != b.coords.size()) fail_usage("sequences differ in shape");
  if (a.coords.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.coords.size(); ++i) s += std::abs(a.coords[i] - b.coords[i]);
  return s / static_cast<double>(a.coords.size());
}

namespace {

template <class Decode>
InterpolationSweep sweep(std::span<const double> t0, std::span<const double> t1, int steps,
                         Decode decode) {
  if (steps < 2) fail_usage("interpolation needs steps >= 2");
  InterpolationSweep s;
  for (int i = 0; i < steps; ++i) {
    const double a = static_cast<double>(i) / (steps - 1);
    s.alphas.push_back(a);
    // Exact endpoints rather than 0 * t1 + 1 * t0 rounding.
    const TemplateVector t = i == 0          ? TemplateVector(t0.begin(), t0.end())
                             : i == steps - 1 ? TemplateVector(t1.begin(), t1.end())
                                              : interpolate(t0, t1, a);
    s.outputs.push_back(decode(t));
    if (i > 0) s.adjacent_diff.push_back(mean_abs_difference(s.outputs[i - 1], s.outputs[i]));
  }
  return s;
}

}  // namespace

InterpolationSweep interpolation_sweep(GestureVae& vae, std::span<const double> t0,
                                       std::span<const double> t1, int steps) {
  return sweep(t0, t1, steps, [&](const TemplateVector& t) { return decode_one(vae, t); });
}

InterpolationSweep interpolation_sweep(GestureModel& model, const Tensor& mel,
                                       std::span<const double> t0, std::span<const double> t1,
                                       int steps) {
  const GeneratorConfig g = model.config.effective_generator();
  if (g.template_mode != TemplateMode::clip) {
    fail_usage("generator interpolation needs a clip-template model");
  }
  if (mel.rank() != 2) fail_usage("interpolation expects a single (M, T) mel");
  const Tensor m = mel.reshaped({1, mel.dim(0), mel.dim(1)});
  const int frames = mel.dim(1) / g.frames_per_pose_frame;
  return sweep(t0, t1, steps, [&](const TemplateVector& t) {
    if (static_cast<int>(t.size()) != g.template_dim) fail_usage("template dimension mismatch");
    const Tensor feat = tile_template(t, frames);
    const Tensor y = model.predict(m, &feat);
    return GestureSequence::from_channels(model.generator.layout(), y, 0, model.config.mel.fps);
  });
}

// ---------------------------------------------------------------- SVG

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string pca_svg(const PcaResult& pca, const std::vector<std::string>& labels) {
  constexpr double kSize = 400.0, kPad = 30.0;
  double lo = -1e-9, hi = 1e-9;
  for (const auto& p : pca.points) {
    for (double v : p) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const double ext = std::max(std::abs(lo), std::abs(hi));
  auto sx = [&](double v) { return kPad + (v + ext) / (2 * ext) * (kSize - 2 * kPad); };
  auto sy = [&](double v) { return kSize - sx(v); };
  std::map<std::string, int> colour;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
    << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<line x1=\"" << sx(0) << "\" y1=\"" << kPad << "\" x2=\"" << sx(0) << "\" y2=\""
    << kSize - kPad << "\" stroke=\"#bbb\"/>\n"
    << "<line x1=\"" << kPad << "\" y1=\"" << sy(0) << "\" x2=\"" << kSize - kPad << "\" y2=\""
    << sy(0) << "\" stroke=\"#bbb\"/>\n";
  for (std::size_t i = 0; i < pca.points.size(); ++i) {
    const auto& p = pca.points[i];
    const double x = p.empty() ? 0.0 : p[0];
    const double y = p.size() > 1 ? p[1] : 0.0;
    const std::string lab = i < labels.size() ? labels[i] : "";
    const int c = colour.emplace(lab, static_cast<int>(colour.size())).first->second;
    o << "<circle cx=\"" << fmt(sx(x)) << "\" cy=\"" << fmt(sy(y)) << "\" r=\"3\" fill=\""
      << kPalette[c % 8] << "\"/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string skeleton_strip_svg(const std::vector<GestureSequence>& rows, int stride) {
  if (stride < 1) fail_usage("stride must be >= 1");
  constexpr double kCell = 120.0;
  int cols = 1;
  for (const auto& r : rows) cols = std::max(cols, (r.frames + stride - 1) / stride);
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cols * kCell << "\" height=\""
    << std::max<std::size_t>(rows.size(), 1) * kCell
    << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const GestureSequence& s = rows[r];
    const SkeletonLayout& l = *s.layout;
    for (int f = 0, col = 0; f < s.frames; f += stride, ++col) {
      auto px = [&](int k) { return col * kCell + s.at(f, k, 0) * kCell; };
      auto py = [&](int k) { return r * kCell + s.at(f, k, 1) * kCell; };
      for (int g = 0; g < kNumGroups; ++g) {
        const int root = l.root_of_group[g];
        for (int k : l.groups[g]) {
          if (k == root) continue;
          o << "<line x1=\"" << fmt(px(root)) << "\" y1=\"" << fmt(py(root)) << "\" x2=\""
            << fmt(px(k)) << "\" y2=\"" << fmt(py(k)) << "\" stroke=\"" << kPalette[g % 8]
            << "\" stroke-width=\"0.8\"/>\n";
        }
        if (root != l.neck) {
          o << "<line x1=\"" << fmt(px(l.neck)) << "\" y1=\"" << fmt(py(l.neck)) << "\" x2=\""
            << fmt(px(root)) << "\" y2=\"" << fmt(py(root)) << "\" stroke=\"#444\" stroke-width=\"0.8\"/>\n";
        }
      }
    }
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace sdt
