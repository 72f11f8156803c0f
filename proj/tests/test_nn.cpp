#include <doctest.h>

#include <cmath>

#include "sdt/nn.hpp"
#include "support.hpp"

using namespace sdt;

namespace {

// Loss = <w, f(x)>. Checks dL/dx from backward and dL/dp for every param
// against central differences.
template <class Fwd, class Bwd>
void grad_check(Tensor& x, std::vector<Param*> params, Fwd fwd, Bwd bwd, sdt::Rng& rng,
                double tol = 1e-6) {
  const Tensor y0 = fwd(x);
  const Tensor w = testutil::random_tensor(y0.shape(), rng);
  auto loss = [&] {
    const Tensor y = fwd(x);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };
  for (Param* p : params) p->zero_grad();
  fwd(x);
  const Tensor gx = bwd(w);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double fd = testutil::central_diff(loss, x[i], 1e-5);
    CHECK(testutil::rel_err(gx[i], fd, 1e-4) < tol);
  }
  // Copy analytic grads first: the loss lambda reruns forward.
  std::vector<Tensor> grads;
  for (Param* p : params) grads.push_back(p->grad);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param* p = params[k];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double fd = testutil::central_diff(loss, p->value[i], 1e-5);
      INFO(p->name << "[" << i << "]");
      CHECK(testutil::rel_err(grads[k][i], fd, 1e-4) < tol);
    }
  }
}

}  // namespace

TEST_CASE("conv2d gradients") {
  sdt::Rng rng(1);
  Conv2d c("c", 2, 3, 3, 2, 2, 1, 1, 0);
  c.init(rng);
  for (auto& v : c.bias().value.storage()) v = rng.normal();
  Tensor x = testutil::random_tensor({2, 2, 5, 4}, rng);
  std::vector<Param*> ps;
  c.collect(ps);
  CHECK(ps.size() == 2);
  grad_check(x, ps, [&](const Tensor& t) { return c.forward(t); },
             [&](const Tensor& g) { return c.backward(g); }, rng);
}

TEST_CASE("conv2d output geometry") {
  sdt::Rng rng(1);
  Conv2d c("c", 1, 4, 3, 3, 2, 2, 1, 1);
  c.init(rng);
  const Tensor y = c.forward(Tensor({1, 1, 8, 9}));
  CHECK(y.shape() == std::vector<int>{1, 4, 4, 5});
}

TEST_CASE("conv1d gradients, stride 2") {
  sdt::Rng rng(2);
  Conv1d c("c", 3, 2, 3, 2, 1);
  c.init(rng);
  Tensor x = testutil::random_tensor({2, 3, 7}, rng);
  std::vector<Param*> ps;
  c.collect(ps);
  grad_check(x, ps, [&](const Tensor& t) { return c.forward(t); },
             [&](const Tensor& g) { return c.backward(g); }, rng);
  CHECK(c.forward(x).dim(2) == 4);  // ceil(7 / 2)
}

TEST_CASE("linear gradients") {
  sdt::Rng rng(3);
  Linear l("l", 5, 3);
  l.init(rng);
  Tensor x = testutil::random_tensor({4, 5}, rng);
  std::vector<Param*> ps;
  l.collect(ps);
  grad_check(x, ps, [&](const Tensor& t) { return l.forward(t); },
             [&](const Tensor& g) { return l.backward(g); }, rng);
}

TEST_CASE("leaky relu gradients") {
  sdt::Rng rng(4);
  LeakyRelu a(0.2);
  Tensor x = testutil::random_tensor({2, 3, 5}, rng);
  grad_check(x, {}, [&](const Tensor& t) { return a.forward(t); },
             [&](const Tensor& g) { return a.backward(g); }, rng);
  Tensor neg({1, 1, 1}, -2.0);
  CHECK(a.forward(neg)[0] == doctest::Approx(-0.4));
}

TEST_CASE("upsample gradients and cropping") {
  sdt::Rng rng(5);
  Upsample u;
  Tensor x = testutil::random_tensor({2, 2, 4}, rng);
  grad_check(x, {}, [&](const Tensor& t) { return u.forward(t, 7); },
             [&](const Tensor& g) { return u.backward(g); }, rng);
  const Tensor y = u.forward(x, 7);
  CHECK(y.dim(2) == 7);
  CHECK(y.at(1, 1, 6) == x.at(1, 1, 3));
  CHECK(y.at(0, 0, 2) == x.at(0, 0, 1));
}

TEST_CASE("norm gradients for every kind") {
  for (NormKind k : {NormKind::batch, NormKind::instance, NormKind::transposed_instance}) {
    CAPTURE(to_string(k));
    sdt::Rng rng(6);
    Norm n("n", k, 3);
    for (auto& v : n.gamma().value.storage()) v = rng.uniform(0.5, 1.5);
    for (auto& v : n.beta().value.storage()) v = rng.normal();
    Tensor x = testutil::random_tensor({2, 3, 5}, rng);
    std::vector<Param*> ps;
    n.collect(ps);
    grad_check(x, ps, [&](const Tensor& t) { return n.forward(t); },
               [&](const Tensor& g) { return n.backward(g); }, rng, 1e-5);
  }
}

TEST_CASE("norm kind names round trip") {
  for (NormKind k : {NormKind::none, NormKind::batch, NormKind::instance, NormKind::transposed_instance}) {
    CHECK(parse_norm_kind(to_string(k)) == k);
  }
  CHECK(testutil::error_kind([] { parse_norm_kind("layer"); }) == testutil::kUsage);
}

TEST_CASE("transposed instance norm worked example") {
  Norm n("n", NormKind::transposed_instance, 3);
  Tensor x({1, 3, 1});
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  const Tensor y = n.forward(x);
  // population variance 2/3, eps 1e-5
  const double s = std::sqrt(2.0 / 3.0 + 1e-5);
  CHECK(y[0] == doctest::Approx(-1.0 / s).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(0.0));
  CHECK(y[2] == doctest::Approx(1.0 / s).epsilon(1e-12));
  CHECK(y[0] == doctest::Approx(-1.2247).epsilon(1e-3));
}

TEST_CASE("transposed instance norm of a constant vector is zero") {
  Norm n("n", NormKind::transposed_instance, 4);
  const Tensor y = n.forward(Tensor({2, 4, 3}, 7.5));
  for (double v : y.storage()) CHECK(v == 0.0);
}

TEST_CASE("per-frame statistics of transposed instance norm") {
  sdt::Rng rng(7);
  Norm n("n", NormKind::transposed_instance, 16);
  Tensor x = testutil::random_tensor({3, 16, 11}, rng, 4.0);
  for (auto& v : x.storage()) v += 2.0;
  n.forward(x);
  const Tensor& h = n.normalized();
  for (int b = 0; b < 3; ++b) {
    for (int l = 0; l < 11; ++l) {
      double m = 0, q = 0;
      for (int c = 0; c < 16; ++c) m += h.at(b, c, l) / 16;
      for (int c = 0; c < 16; ++c) q += (h.at(b, c, l) - m) * (h.at(b, c, l) - m) / 16;
      CHECK(std::abs(m) < 1e-4);
      CHECK(std::abs(q - 1.0) < 1e-4);
    }
  }
}

TEST_CASE("instance norm normalizes along frames instead") {
  sdt::Rng rng(8);
  Norm n("n", NormKind::instance, 4);
  Tensor x = testutil::random_tensor({2, 4, 9}, rng, 3.0);
  n.forward(x);
  const Tensor& h = n.normalized();
  for (int b = 0; b < 2; ++b) {
    for (int c = 0; c < 4; ++c) {
      double m = 0;
      for (int l = 0; l < 9; ++l) m += h.at(b, c, l) / 9;
      CHECK(std::abs(m) < 1e-12);
    }
  }
}

TEST_CASE("batch norm uses running statistics in eval mode") {
  sdt::Rng rng(9);
  Norm n("n", NormKind::batch, 2, 1e-5, 1.0);
  Tensor x = testutil::random_tensor({4, 2, 6}, rng);
  const Tensor train_y = n.forward(x);
  n.set_training(false);
  const Tensor eval_y = n.forward(x);
  // momentum 1 copies the batch statistics; only the variance estimator
  // may differ (unbiased running variance).
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(eval_y[i] == doctest::Approx(train_y[i]).epsilon(0.05));
  std::vector<Buffer> bufs;
  n.collect_buffers(bufs);
  CHECK(bufs.size() == 2);
}

TEST_CASE("conv block with each norm passes gradients") {
  for (NormKind k : {NormKind::none, NormKind::instance, NormKind::transposed_instance}) {
    CAPTURE(to_string(k));
    sdt::Rng rng(10);
    ConvBlock b("b", 3, 4, 3, 2, k);
    b.init(rng);
    Tensor x = testutil::random_tensor({2, 3, 8}, rng);
    std::vector<Param*> ps;
    b.collect(ps);
    CHECK(ps.size() == (k == NormKind::none ? 2u : 4u));
    grad_check(x, ps, [&](const Tensor& t) { return b.forward(t); },
               [&](const Tensor& g) { return b.backward(g); }, rng, 1e-5);
  }
}
