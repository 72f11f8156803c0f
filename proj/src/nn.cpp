#include "sdt/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "sdt/error.hpp"

namespace sdt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

const double kHeGain = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));

void uniform_fill(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int kh, int kw, int sh,
               int sw, int ph, int pw, bool bias)
    : in_(in_ch), out_(out_ch), kh_(kh), kw_(kw), sh_(sh), sw_(sw), ph_(ph),
      pw_(pw), has_bias_(bias),
      weight_(name + ".weight", Tensor({out_ch, in_ch, kh, kw})),
      bias_(name + ".bias", Tensor({bias ? out_ch : 0})) {
  if (in_ch <= 0 || out_ch <= 0 || kh <= 0 || kw <= 0 || sh <= 0 || sw <= 0) {
    fail_usage("invalid convolution geometry for " + name);
  }
}

// He-uniform weights for LeakyReLU(0.2) inputs; biases start at zero.
void Conv2d::init(Rng& rng) {
  const double fan_in = static_cast<double>(in_ * kh_ * kw_);
  uniform_fill(weight_.value, kHeGain * std::sqrt(3.0 / fan_in), rng);
  if (has_bias_) bias_.value.fill(0.0);
}

void Conv2d::collect(std::vector<Param*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != in_) {
    fail_usage(weight_.name + ": expected (B, " + std::to_string(in_) +
               ", H, W) input, got " + x.shape_str());
  }
  in_shape_ = x.shape();
  const int batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  out_h_ = (h + 2 * ph_ - kh_) / sh_ + 1;
  out_w_ = (w + 2 * pw_ - kw_) / sw_ + 1;
  if (out_h_ <= 0 || out_w_ <= 0) {
    fail_usage(weight_.name + ": input " + x.shape_str() + " too small");
  }
  const std::size_t plane = static_cast<std::size_t>(out_h_) * out_w_;
  const std::size_t ncols = plane * batch;
  const int krows = in_ * kh_ * kw_;
  cols_.assign(static_cast<std::size_t>(krows) * ncols, 0.0);

  for (int c = 0; c < in_; ++c) {
    for (int i = 0; i < kh_; ++i) {
      for (int j = 0; j < kw_; ++j) {
        double* row = cols_.data() + ((c * kh_ + i) * kw_ + j) * ncols;
        for (int n = 0; n < batch; ++n) {
          const double* src = x.data() + (static_cast<std::size_t>(n) * in_ + c) * h * w;
          double* dst = row + n * plane;
          for (int oy = 0; oy < out_h_; ++oy) {
            const int iy = oy * sh_ - ph_ + i;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < out_w_; ++ox) {
              const int ix = ox * sw_ - pw_ + j;
              if (ix >= 0 && ix < w) dst[oy * out_w_ + ox] = src[iy * w + ix];
            }
          }
        }
      }
    }
  }

  RowMat y(out_, ncols);
  y.noalias() = ConstMatMap(weight_.value.data(), out_, krows) *
                ConstMatMap(cols_.data(), krows, static_cast<Eigen::Index>(ncols));

  Tensor out({batch, out_, out_h_, out_w_});
  for (int n = 0; n < batch; ++n) {
    for (int co = 0; co < out_; ++co) {
      const double b = has_bias_ ? bias_.value[co] : 0.0;
      double* dst = out.data() + (static_cast<std::size_t>(n) * out_ + co) * plane;
      const double* src = y.data() + co * ncols + n * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
    }
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& gy) {
  const int batch = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
  const std::size_t plane = static_cast<std::size_t>(out_h_) * out_w_;
  const std::size_t ncols = plane * batch;
  const int krows = in_ * kh_ * kw_;
  if (gy.size() != ncols * out_) fail_usage(weight_.name + ": bad gradient shape");

  RowMat g(out_, ncols);
  for (int n = 0; n < batch; ++n) {
    for (int co = 0; co < out_; ++co) {
      const double* src = gy.data() + (static_cast<std::size_t>(n) * out_ + co) * plane;
      std::copy_n(src, plane, g.data() + co * ncols + n * plane);
    }
  }
  if (has_bias_) {
    for (int co = 0; co < out_; ++co) bias_.grad[co] += g.row(co).sum();
  }
  ConstMatMap cols(cols_.data(), krows, static_cast<Eigen::Index>(ncols));
  MatMap(weight_.grad.data(), out_, krows).noalias() += g * cols.transpose();
  RowMat dcols = ConstMatMap(weight_.value.data(), out_, krows).transpose() * g;

  Tensor gx(in_shape_);
  for (int c = 0; c < in_; ++c) {
    for (int i = 0; i < kh_; ++i) {
      for (int j = 0; j < kw_; ++j) {
        const double* row = dcols.data() + ((c * kh_ + i) * kw_ + j) * ncols;
        for (int n = 0; n < batch; ++n) {
          double* dst = gx.data() + (static_cast<std::size_t>(n) * in_ + c) * h * w;
          const double* src = row + n * plane;
          for (int oy = 0; oy < out_h_; ++oy) {
            const int iy = oy * sh_ - ph_ + i;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < out_w_; ++ox) {
              const int ix = ox * sw_ - pw_ + j;
              if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * out_w_ + ox];
            }
          }
        }
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------- Conv1d

Tensor Conv1d::forward(const Tensor& x) {
  if (x.rank() != 3) fail_usage("Conv1d expects (B, C, L), got " + x.shape_str());
  Tensor y = conv_.forward(x.reshaped({x.dim(0), x.dim(1), 1, x.dim(2)}));
  y.reshape({y.dim(0), y.dim(1), y.dim(3)});
  return y;
}

Tensor Conv1d::backward(const Tensor& gy) {
  Tensor gx = conv_.backward(gy.reshaped({gy.dim(0), gy.dim(1), 1, gy.dim(2)}));
  gx.reshape({gx.dim(0), gx.dim(1), gx.dim(3)});
  return gx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, int in, int out)
    : in_(in), out_(out),
      weight_(name + ".weight", Tensor({out, in})),
      bias_(name + ".bias", Tensor({out})) {}

void Linear::init(Rng& rng) {
  uniform_fill(weight_.value, kHeGain * std::sqrt(3.0 / in_), rng);
  bias_.value.fill(0.0);
}

void Linear::collect(std::vector<Param*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

Tensor Linear::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != in_) {
    fail_usage(weight_.name + ": expected (B, " + std::to_string(in_) +
               ") input, got " + x.shape_str());
  }
  x_ = x;
  const int batch = x.dim(0);
  Tensor y({batch, out_});
  MatMap ym(y.data(), batch, out_);
  ym.noalias() = ConstMatMap(x.data(), batch, in_) *
                 ConstMatMap(weight_.value.data(), out_, in_).transpose();
  for (int n = 0; n < batch; ++n) {
    for (int o = 0; o < out_; ++o) ym(n, o) += bias_.value[o];
  }
  return y;
}

Tensor Linear::backward(const Tensor& gy) {
  const int batch = x_.dim(0);
  ConstMatMap g(gy.data(), batch, out_);
  MatMap(weight_.grad.data(), out_, in_).noalias() +=
      g.transpose() * ConstMatMap(x_.data(), batch, in_);
  for (int o = 0; o < out_; ++o) bias_.grad[o] += g.col(o).sum();
  Tensor gx({batch, in_});
  MatMap(gx.data(), batch, in_).noalias() =
      g * ConstMatMap(weight_.value.data(), out_, in_);
  return gx;
}

// ---------------------------------------------------------------- LeakyRelu

Tensor LeakyRelu::forward(const Tensor& x) {
  x_ = x;
  Tensor y = x;
  for (double& v : y.values()) {
    if (v < 0.0) v *= slope_;
  }
  return y;
}

Tensor LeakyRelu::backward(const Tensor& gy) {
  Tensor gx = gy;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    if (x_[i] < 0.0) gx[i] *= slope_;
  }
  return gx;
}

// ---------------------------------------------------------------- Norm

NormKind parse_norm_kind(const std::string& s) {
  if (s == "none") return NormKind::none;
  if (s == "batch") return NormKind::batch;
  if (s == "instance") return NormKind::instance;
  if (s == "transposed_instance") return NormKind::transposed_instance;
  fail_usage("unknown norm kind '" + s +
             "' (expected none|batch|instance|transposed_instance)");
}

std::string to_string(NormKind k) {
  switch (k) {
    case NormKind::none: return "none";
    case NormKind::batch: return "batch";
    case NormKind::instance: return "instance";
    case NormKind::transposed_instance: return "transposed_instance";
  }
  return "none";
}

Norm::Norm(std::string name, NormKind kind, int channels, double eps,
           double momentum)
    : kind_(kind), channels_(channels), eps_(eps), momentum_(momentum),
      name_(name),
      gamma_(name + ".gamma", Tensor({channels}, 1.0)),
      beta_(name + ".beta", Tensor({channels}, 0.0)),
      running_mean_({channels}, 0.0),
      running_var_({channels}, 1.0) {}

void Norm::collect(std::vector<Param*>& out) {
  if (kind_ == NormKind::none) return;
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void Norm::collect_buffers(std::vector<Buffer>& out) {
  if (kind_ != NormKind::batch) return;
  out.push_back({name_ + ".running_mean", &running_mean_});
  out.push_back({name_ + ".running_var", &running_var_});
}

namespace {

// One statistics group: elements base + o*outer_stride + i*inner_stride.
struct Group {
  std::size_t base;
  int outer_n;
  std::size_t outer_stride;
  int inner_n;
  std::size_t inner_stride;

  template <class F>
  void each(F&& f) const {
    for (int o = 0; o < outer_n; ++o) {
      const std::size_t off = base + o * outer_stride;
      for (int i = 0; i < inner_n; ++i) f(off + i * inner_stride);
    }
  }
  int count() const { return outer_n * inner_n; }
};

std::vector<Group> make_groups(NormKind kind, int batch, int ch, int len) {
  std::vector<Group> g;
  const std::size_t cl = static_cast<std::size_t>(ch) * len;
  switch (kind) {
    case NormKind::batch:
      for (int c = 0; c < ch; ++c) {
        g.push_back({static_cast<std::size_t>(c) * len, batch, cl, len, 1});
      }
      break;
    case NormKind::instance:
      for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < ch; ++c) {
          g.push_back({n * cl + static_cast<std::size_t>(c) * len, 1, 0, len, 1});
        }
      }
      break;
    case NormKind::transposed_instance:
      for (int n = 0; n < batch; ++n) {
        for (int l = 0; l < len; ++l) {
          g.push_back({n * cl + l, 1, 0, ch, static_cast<std::size_t>(len)});
        }
      }
      break;
    case NormKind::none:
      break;
  }
  return g;
}

}  // namespace

Tensor Norm::forward(const Tensor& x) {
  if (kind_ == NormKind::none) return x;
  if (x.rank() < 3 || x.dim(1) != channels_) {
    fail_usage(name_ + ": expected channel dim " + std::to_string(channels_) +
               ", got " + x.shape_str());
  }
  in_shape_ = x.shape();
  const int batch = x.dim(0);
  const int len = static_cast<int>(x.size() / (static_cast<std::size_t>(batch) * channels_));
  const auto groups = make_groups(kind_, batch, channels_, len);

  xhat_ = Tensor(x.shape());
  inv_std_.assign(groups.size(), 0.0);
  used_running_ = kind_ == NormKind::batch && !training_;

  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    double mean = 0.0, var = 0.0;
    if (used_running_) {
      mean = running_mean_[gi];
      var = running_var_[gi];
    } else {
      g.each([&](std::size_t i) { mean += x[i]; });
      mean /= g.count();
      g.each([&](std::size_t i) { var += (x[i] - mean) * (x[i] - mean); });
      var /= g.count();
      if (kind_ == NormKind::batch) {
        const int n = g.count();
        const double unbiased = n > 1 ? var * n / (n - 1) : var;
        running_mean_[gi] = (1.0 - momentum_) * running_mean_[gi] + momentum_ * mean;
        running_var_[gi] = (1.0 - momentum_) * running_var_[gi] + momentum_ * unbiased;
      }
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[gi] = inv;
    g.each([&](std::size_t i) { xhat_[i] = (x[i] - mean) * inv; });
  }

  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const int c = static_cast<int>((i / len) % channels_);
    y[i] = gamma_.value[c] * xhat_[i] + beta_.value[c];
  }
  return y;
}

Tensor Norm::backward(const Tensor& gy) {
  if (kind_ == NormKind::none) return gy;
  const int batch = in_shape_[0];
  const int len = static_cast<int>(gy.size() / (static_cast<std::size_t>(batch) * channels_));
  Tensor dxhat(in_shape_);
  for (std::size_t i = 0; i < gy.size(); ++i) {
    const int c = static_cast<int>((i / len) % channels_);
    gamma_.grad[c] += gy[i] * xhat_[i];
    beta_.grad[c] += gy[i];
    dxhat[i] = gy[i] * gamma_.value[c];
  }
  Tensor gx(in_shape_);
  const auto groups = make_groups(kind_, batch, channels_, len);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const Group& g = groups[gi];
    const double inv = inv_std_[gi];
    if (used_running_) {
      g.each([&](std::size_t i) { gx[i] = dxhat[i] * inv; });
      continue;
    }
    double m1 = 0.0, m2 = 0.0;
    g.each([&](std::size_t i) {
      m1 += dxhat[i];
      m2 += dxhat[i] * xhat_[i];
    });
    m1 /= g.count();
    m2 /= g.count();
    g.each([&](std::size_t i) { gx[i] = inv * (dxhat[i] - m1 - xhat_[i] * m2); });
  }
  return gx;
}

// ---------------------------------------------------------------- Upsample

Tensor Upsample::forward(const Tensor& x, int target) {
  const int batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
  if (target > 2 * len || target < 1) fail_usage("Upsample: bad target length");
  in_len_ = len;
  Tensor y({batch, ch, target});
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < ch; ++c) {
      for (int j = 0; j < target; ++j) y.at(n, c, j) = x.at(n, c, j / 2);
    }
  }
  return y;
}

Tensor Upsample::backward(const Tensor& gy) {
  const int batch = gy.dim(0), ch = gy.dim(1), target = gy.dim(2);
  Tensor gx({batch, ch, in_len_});
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < ch; ++c) {
      for (int j = 0; j < target; ++j) gx.at(n, c, j / 2) += gy.at(n, c, j);
    }
  }
  return gx;
}

// ---------------------------------------------------------------- ConvBlock

ConvBlock::ConvBlock(const std::string& name, int in_ch, int out_ch, int kernel,
                     int stride, NormKind norm)
    : conv_(name + ".conv", in_ch, out_ch, kernel, stride, kernel / 2),
      norm_(name + ".norm", norm, out_ch),
      has_norm_(norm != NormKind::none) {}

Tensor ConvBlock::forward(const Tensor& x) {
  return act_.forward(norm_.forward(conv_.forward(x)));
}

Tensor ConvBlock::backward(const Tensor& gy) {
  return conv_.backward(norm_.backward(act_.backward(gy)));
}

void ConvBlock::collect(std::vector<Param*>& out) {
  conv_.collect(out);
  norm_.collect(out);
}

}  // namespace sdt
