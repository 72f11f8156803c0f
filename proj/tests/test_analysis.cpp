#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "sdt/analysis.hpp"
#include "sdt/synth.hpp"
#include "sdt/train.hpp"
#include "support.hpp"

using namespace sdt;
using testutil::error_kind;

namespace {

// Small VAE trained on synthetic clips, shared by the decoder checks.
GestureVae& toy_vae() {
  static GestureVae vae = [] {
    SynthConfig sc;
    sc.n_clips = 40;
    sc.seed = 31;
    std::vector<GestureSequence> seqs;
    for (int i = 0; i < sc.n_clips; ++i) seqs.push_back(synth_clip(sc, i).record.gesture);
    VaeTrainConfig vc = testutil::desk_vae_config(31);
    vc.epochs = 10;
    return train_vae(vc, seqs).vae;
  }();
  return vae;
}

std::vector<double> unit(sdt::Rng& rng, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  double s = 0;
  for (auto& x : v) {
    x = rng.normal();
    s += x * x;
  }
  for (auto& x : v) x /= std::sqrt(s);
  return v;
}

}  // namespace

TEST_CASE("PCA on collinear points") {
  std::vector<TemplateVector> v;
  for (int i = 0; i < 6; ++i) v.push_back({1.0 + i, 2.0 + 2.0 * i, -1.0 * i});
  const PcaResult p = pca_project(v, 2);
  CHECK(p.dims == 1);
  REQUIRE(!p.explained_ratio.empty());
  CHECK(p.explained_ratio[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("PCA preserves distances inside a plane and centres the output") {
  sdt::Rng rng(1);
  const Eigen::MatrixXd basis = Eigen::MatrixXd::Random(5, 2).householderQr().householderQ() * Eigen::MatrixXd::Identity(5, 2);
  std::vector<TemplateVector> v;
  for (int i = 0; i < 12; ++i) {
    const Eigen::VectorXd x = basis * Eigen::Vector2d(rng.normal() * 3, rng.normal()) + Eigen::VectorXd::Constant(5, 0.7);
    v.emplace_back(x.data(), x.data() + 5);
  }
  const PcaResult p = pca_project(v, 2);
  REQUIRE(p.dims == 2);
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      double d0 = 0, d1 = 0;
      for (int k = 0; k < 5; ++k) d0 += (v[i][k] - v[j][k]) * (v[i][k] - v[j][k]);
      for (int k = 0; k < 2; ++k) d1 += (p.points[i][k] - p.points[j][k]) * (p.points[i][k] - p.points[j][k]);
      CHECK(std::sqrt(d1) == doctest::Approx(std::sqrt(d0)).epsilon(1e-9));
    }
  }
  for (int k = 0; k < 2; ++k) {
    double m = 0;
    for (const auto& q : p.points) m += q[k] / static_cast<double>(p.points.size());
    CHECK(std::abs(m) < 1e-12);
  }
  CHECK(p.explained_ratio[0] + p.explained_ratio[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("PCA explained variance is non-increasing and sums to at most one") {
  sdt::Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TemplateVector> v(10, TemplateVector(6));
    for (auto& t : v) {
      for (auto& x : t) x = rng.normal();
    }
    const PcaResult p = pca_project(v, 4);
    double s = 0;
    for (std::size_t i = 0; i < p.explained_ratio.size(); ++i) {
      s += p.explained_ratio[i];
      if (i > 0) CHECK(p.explained_ratio[i] <= p.explained_ratio[i - 1] + 1e-12);
    }
    CHECK(s <= 1.0 + 1e-9);
  }
  CHECK(error_kind([] { pca_project({{1.0, 2.0}, {3.0, 4.0}}, 2); }) == testutil::kUsage);
}

TEST_CASE("semantic direction of diag(3, 1)") {
  Eigen::MatrixXd w(2, 2);
  w << 3, 0, 0, 1;
  const auto s = semantic_directions(w);
  CHECK(s.top[0] == doctest::Approx(1.0));
  CHECK(s.top[1] == doctest::Approx(0.0));
  CHECK(s.eigenvalues[0] == doctest::Approx(9.0));
  CHECK(s.eigenvalues[1] == doctest::Approx(1.0));
  CHECK_FALSE(s.degenerate);
  w << -3, 0, 0, 1;
  CHECK(semantic_directions(w).top[0] == doctest::Approx(1.0));
}

TEST_CASE("orthogonal weights are flagged degenerate") {
  const Eigen::MatrixXd q = Eigen::MatrixXd::Random(4, 4).householderQr().householderQ();
  const auto s = semantic_directions(q);
  CHECK(s.degenerate);
  double n = 0;
  for (double x : s.top) n += x * x;
  CHECK(n == doctest::Approx(1.0));
}

TEST_CASE("top direction maximizes the stretch") {
  sdt::Rng rng(3);
  const Eigen::MatrixXd w = Eigen::MatrixXd::Random(12, 5);
  const auto s = semantic_directions(w);
  const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(s.top.data(), 5);
  CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-12));
  Eigen::Index arg;
  v.cwiseAbs().maxCoeff(&arg);
  CHECK(v(arg) > 0.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto u = unit(rng, 5);
    CHECK((w * v).norm() >= (w * Eigen::Map<const Eigen::VectorXd>(u.data(), 5)).norm() - 1e-9);
  }
}

TEST_CASE("rotating the output side leaves the direction unchanged") {
  const Eigen::MatrixXd w = Eigen::MatrixXd::Random(8, 4);
  const Eigen::MatrixXd q = Eigen::MatrixXd::Random(8, 8).householderQr().householderQ();
  const auto a = semantic_directions(w), b = semantic_directions(q * w);
  for (int k = 0; k < 4; ++k) CHECK(a.top[k] == doctest::Approx(b.top[k]).epsilon(1e-9));
}

TEST_CASE("trained VAE: direction, opposites and sweeps") {
  GestureVae& vae = toy_vae();
  const auto dirs = top_semantic_direction(vae);
  CHECK(dirs.top.size() == static_cast<std::size_t>(vae.config().template_dim));
  CHECK(dirs.directions.size() == dirs.eigenvalues.size());

  const auto [p0, m0] = decode_opposites(vae, dirs.top, 0.0);
  CHECK(p0.coords == m0.coords);
  const auto [p, m] = decode_opposites(vae, dirs.top, 2.0);
  CHECK(mean_abs_difference(p, m) > 1e-4);
  std::vector<double> neg(dirs.top);
  for (auto& x : neg) x = -x;
  const auto [np, nm] = decode_opposites(vae, neg, 2.0);
  CHECK(np.coords == m.coords);
  CHECK(nm.coords == p.coords);

  sdt::Rng rng(4);
  std::vector<double> t0(dirs.top.size()), t1(dirs.top.size());
  for (auto& x : t0) x = rng.normal();
  for (auto& x : t1) x = rng.normal();
  const auto two = interpolation_sweep(vae, t0, t1, 2);
  REQUIRE(two.outputs.size() == 2);
  Tensor z0({1, static_cast<int>(t0.size())}), z1 = z0;
  std::copy(t0.begin(), t0.end(), z0.data());
  std::copy(t1.begin(), t1.end(), z1.data());
  CHECK(two.outputs[0].coords == unstack_sequences(vae.layout(), vae.decode(z0))[0].coords);
  CHECK(two.outputs[1].coords == unstack_sequences(vae.layout(), vae.decode(z1))[0].coords);
  double prev = 1e300;
  for (int steps : {3, 5, 9, 17}) {
    const auto s = interpolation_sweep(vae, t0, t1, steps);
    CHECK(s.alphas.front() == 0.0);
    CHECK(s.alphas.back() == 1.0);
    const double mx = *std::max_element(s.adjacent_diff.begin(), s.adjacent_diff.end());
    CHECK(mx < prev);
    prev = mx;
  }
  CHECK(error_kind([&] { interpolation_sweep(vae, t0, t1, 1); }) == testutil::kUsage);
}

TEST_CASE("analysis needs a frozen VAE") {
  GestureVae v(testutil::tiny_vae());
  sdt::Rng rng(5);
  v.init(rng);
  CHECK(error_kind([&] { top_semantic_direction(v); }) == testutil::kUsage);
}

TEST_CASE("SVG output is well formed text") {
  PcaResult p = pca_project({{0, 0}, {1, 2}, {2, 1}}, 2);
  const std::string s = pca_svg(p, {"a", "b", "a"});
  CHECK(s.rfind("<svg", 0) == 0);
  CHECK(s.find("</svg>") != std::string::npos);
  sdt::Rng rng(6);
  const std::string k = skeleton_strip_svg({testutil::random_sequence("toy_v1", 16, rng)}, 8);
  CHECK(k.find("<line") != std::string::npos);
}
