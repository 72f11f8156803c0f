#include <doctest.h>

#include <cmath>
#include <numbers>
#include <nlohmann/json.hpp>

#include "sdt/templates.hpp"
#include "support.hpp"

using namespace sdt;
using testutil::error_kind;

namespace {

// Closed-form KL(N(m, v) || N(0, 1)) per dimension, written independently.
double kl_1d(double m, double v) { return 0.5 * (v + m * m - 1.0 - std::log(v)); }

Tensor rows(std::vector<std::vector<double>> r) {
  Tensor t({static_cast<int>(r.size()), static_cast<int>(r[0].size())});
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < r[i].size(); ++j) t[i * r[0].size() + j] = r[i][j];
  }
  return t;
}

}  // namespace

TEST_CASE("bank starts at zero") {
  const auto b = TemplateBank::init({"a", "b", "c"}, 2, TemplateMode::clip);
  CHECK(b.size() == 3);
  for (const auto& id : b.ids()) {
    const auto e = b.entry(id);
    REQUIRE(e.size() == 2);
    CHECK(e[0] == 0.0);
    CHECK(e[1] == 0.0);
  }
  CHECK(error_kind([&] { b.entry("zzz"); }) == testutil::kUsage);
  CHECK_FALSE(b.contains("zzz"));
}

TEST_CASE("frame mode stores F x C zeros per clip") {
  const auto b = TemplateBank::init({"a", "b"}, 3, TemplateMode::frame, 64);
  CHECK(b.frames() == 64);
  const auto e = b.entry("b");
  CHECK(e.size() == 64 * 3);
  CHECK(std::all_of(e.begin(), e.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("bank init rejections") {
  CHECK(error_kind([] { TemplateBank::init({"a", "a"}, 2, TemplateMode::clip); }) == testutil::kData);
  CHECK(error_kind([] { TemplateBank::init({}, 2, TemplateMode::clip); }) == testutil::kUsage);
  CHECK(error_kind([] { TemplateBank::init({"a"}, 0, TemplateMode::clip); }) == testutil::kUsage);
  CHECK(error_kind([] { TemplateBank::init({"a"}, 2, TemplateMode::frame, 0); }) == testutil::kUsage);
}

TEST_CASE("KL regularizer closed-form cases") {
  // mean 0, population variance 1
  CHECK(kl_regularizer(rows({{-1.0}, {1.0}})) == doctest::Approx(0.0).epsilon(1e-12));
  // mean 1, variance 1
  CHECK(std::abs(kl_regularizer(rows({{0.0}, {2.0}})) - 0.5) < 1e-9);
  // mean 0, variance e
  const double s = std::sqrt(std::numbers::e);
  CHECK(std::abs(kl_regularizer(rows({{-s}, {s}})) - (std::numbers::e - 2.0) / 2.0) < 1e-9);
  CHECK(std::abs(kl_regularizer(rows({{-s}, {s}})) - 0.3591) < 1e-4);
}

TEST_CASE("KL regularizer matches the per-dimension formula on random batches") {
  sdt::Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.index(10)), c = 1 + static_cast<int>(rng.index(6));
    const Tensor b = testutil::random_tensor({n, c}, rng, rng.uniform(0.2, 3.0));
    double expect = 0.0;
    for (int j = 0; j < c; ++j) {
      double m = 0, v = 0;
      for (int i = 0; i < n; ++i) m += b[static_cast<std::size_t>(i) * c + j] / n;
      for (int i = 0; i < n; ++i) {
        const double d = b[static_cast<std::size_t>(i) * c + j] - m;
        v += d * d / n;
      }
      expect += kl_1d(m, std::max(v, kKlVarianceFloor));
    }
    const double got = kl_regularizer(b);
    CHECK(got >= 0.0);
    CHECK(std::abs(got - expect) < 1e-9 * std::max(1.0, expect));
  }
}

TEST_CASE("KL regularizer floors the variance") {
  const Tensor same = rows({{0.5, 0.0}, {0.5, 0.0}});
  const double v = kl_regularizer(same);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(kl_1d(0.5, 1e-8) + kl_1d(0.0, 1e-8)).epsilon(1e-12));
  Tensor g;
  kl_regularizer(same, &g);
  CHECK(g.all_finite());
}

TEST_CASE("KL regularizer needs two rows") {
  CHECK(error_kind([] { kl_regularizer(rows({{1.0, 2.0}})); }) == testutil::kUsage);
}

TEST_CASE("KL regularizer is permutation invariant") {
  sdt::Rng rng(2);
  const Tensor b = testutil::random_tensor({6, 4}, rng);
  Tensor row_perm = b, col_perm = b;
  const int rp[] = {3, 0, 5, 1, 4, 2}, cp[] = {2, 3, 0, 1};
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 4; ++j) {
      row_perm[static_cast<std::size_t>(i) * 4 + j] = b[static_cast<std::size_t>(rp[i]) * 4 + j];
      col_perm[static_cast<std::size_t>(i) * 4 + j] = b[static_cast<std::size_t>(i) * 4 + cp[j]];
    }
  }
  CHECK(kl_regularizer(row_perm) == doctest::Approx(kl_regularizer(b)).epsilon(1e-12));
  CHECK(kl_regularizer(col_perm) == doctest::Approx(kl_regularizer(b)).epsilon(1e-12));
}

TEST_CASE("KL regularizer gradient matches finite differences") {
  sdt::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor b = testutil::random_tensor({2 + static_cast<int>(rng.index(6)), 3}, rng, rng.uniform(0.3, 2.0));
    Tensor g;
    kl_regularizer(b, &g);
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double fd = testutil::central_diff([&] { return kl_regularizer(b); }, b[i], 1e-5);
      CHECK(testutil::rel_err(g[i], fd, 1e-6) < 1e-3);
    }
  }
}

TEST_CASE("sampling") {
  SUBCASE("single entry") {
    auto b = TemplateBank::init({"only"}, 2, TemplateMode::clip);
    b.entry_mut(0)[0] = 4.0;
    for (std::uint64_t s = 0; s < 20; ++s) CHECK(sample_template(b, s) == TemplateVector{4.0, 0.0});
  }
  SUBCASE("deterministic per seed") {
    const auto b = TemplateBank::init({"a", "b", "c", "d", "e"}, 2, TemplateMode::clip);
    for (std::uint64_t s = 0; s < 50; ++s) CHECK(sample_template_index(b, s) == sample_template_index(b, s));
  }
  SUBCASE("uniform over two entries") {
    const auto b = TemplateBank::init({"a", "b"}, 1, TemplateMode::clip);
    int first = 0;
    for (std::uint64_t s = 0; s < 10000; ++s) first += sample_template_index(b, s) == 0;
    CHECK(first / 10000.0 >= 0.45);
    CHECK(first / 10000.0 <= 0.55);
  }
  SUBCASE("empty bank") {
    TemplateBank empty;
    CHECK(error_kind([&] { sample_template(empty, 1); }) == testutil::kUsage);
  }
}

TEST_CASE("interpolation") {
  const std::vector<double> a{0, 0}, b{2, 4};
  CHECK(interpolate(a, b, 0.0) == TemplateVector{0, 0});
  CHECK(interpolate(a, b, 1.0) == TemplateVector{2, 4});
  CHECK(interpolate(a, b, 0.5) == TemplateVector{1, 2});
  sdt::Rng rng(4);
  std::vector<double> p(5), q(5);
  for (auto& v : p) v = rng.normal();
  for (auto& v : q) v = rng.normal();
  CHECK(interpolate(p, q, 0.0) == p);
  CHECK(interpolate(p, q, 1.0) == q);
  CHECK(error_kind([&] { interpolate(a, p, 0.5); }) == testutil::kUsage);
}

TEST_CASE("feature gather and gradient scatter are adjoint") {
  for (TemplateMode mode : {TemplateMode::clip, TemplateMode::frame}) {
    CAPTURE(to_string(mode));
    sdt::Rng rng(5);
    auto bank = TemplateBank::init({"a", "b", "c"}, 3, mode, 6);
    for (auto& v : bank.table().value.storage()) v = rng.normal();
    const std::vector<int> idx{2, 0, 2};
    const Tensor f = bank.features(idx, 6);
    CHECK(f.shape() == std::vector<int>{3, 3, 6});
    const Tensor g = testutil::random_tensor(f.shape(), rng);
    bank.table().zero_grad();
    bank.accumulate_feature_grad(idx, g);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < f.size(); ++i) lhs += f[i] * g[i];
    for (std::size_t i = 0; i < bank.table().value.size(); ++i) rhs += bank.table().value[i] * bank.table().grad[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("frame-mode KL sees every frame vector") {
  auto bank = TemplateBank::init({"a", "b"}, 2, TemplateMode::frame, 5);
  const std::vector<int> idx{0, 1};
  CHECK(bank.vectors(idx).shape() == std::vector<int>{10, 2});
  auto clip = TemplateBank::init({"a", "b"}, 2, TemplateMode::clip);
  CHECK(clip.vectors(idx).shape() == std::vector<int>{2, 2});
}

TEST_CASE("bank JSON export round trip") {
  sdt::Rng rng(6);
  auto bank = TemplateBank::init({"x1", "x2"}, 3, TemplateMode::clip);
  for (auto& v : bank.table().value.storage()) v = rng.normal();
  const std::string text = bank.to_json();
  const auto j = nlohmann::json::parse(text);
  CHECK(j.at("C") == 3);
  CHECK(j.at("mode") == "clip");
  CHECK(j.at("templates").at("x2").size() == 3);
  const auto back = TemplateBank::from_json(text, "t");
  for (int i = 0; i < 2; ++i) {
    const auto a = bank.entry(i), b = back.entry(bank.ids()[i]);
    for (int k = 0; k < 3; ++k) CHECK(a[k] == b[k]);
  }
  CHECK(error_kind([] { TemplateBank::from_json(R"({"C":2,"mode":"clip","templates":{"a":[1]}})", "t"); }) ==
        testutil::kData);
}
