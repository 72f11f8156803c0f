#pragma once

// Minimal layer set with explicit forward/backward passes. Each layer caches
// what its backward pass needs from the most recent forward call, so a layer
// instance must not be shared between two interleaved forward/backward pairs.

#include <string>
#include <vector>

#include "sdt/rng.hpp"
#include "sdt/tensor.hpp"

namespace sdt {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

// Non-trainable state that still belongs in a checkpoint (running statistics).
struct Buffer {
  std::string name;
  Tensor* value;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_ch, int out_ch, int kh, int kw, int sh,
         int sw, int ph, int pw, bool bias = true);

  void init(Rng& rng);
  // x: (B, Cin, H, W) -> (B, Cout, Ho, Wo)
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

  void collect(std::vector<Param*>& out);
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  bool has_bias() const { return has_bias_; }

 private:
  int in_ = 0, out_ = 0, kh_ = 1, kw_ = 1, sh_ = 1, sw_ = 1, ph_ = 0, pw_ = 0;
  bool has_bias_ = true;
  Param weight_, bias_;
  std::vector<int> in_shape_;
  int out_h_ = 0, out_w_ = 0;
  std::vector<double> cols_;
};

// 1D convolution over (B, C, L), expressed as a height-1 Conv2d.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::string name, int in_ch, int out_ch, int kernel, int stride,
         int pad, bool bias = true)
      : conv_(std::move(name), in_ch, out_ch, 1, kernel, 1, stride, 0, pad,
              bias) {}

  void init(Rng& rng) { conv_.init(rng); }
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(std::vector<Param*>& out) { conv_.collect(out); }
  int in_channels() const { return conv_.in_channels(); }
  int out_channels() const { return conv_.out_channels(); }
  Param& weight() { return conv_.weight(); }
  Param& bias() { return conv_.bias(); }

 private:
  Conv2d conv_;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in, int out);

  void init(Rng& rng);
  // x: (B, In) -> (B, Out)
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(std::vector<Param*>& out);
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }

 private:
  int in_ = 0, out_ = 0;
  Param weight_, bias_;
  Tensor x_;
};

class LeakyRelu {
 public:
  explicit LeakyRelu(double slope = 0.2) : slope_(slope) {}
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

 private:
  double slope_;
  Tensor x_;
};

enum class NormKind { none, batch, instance, transposed_instance };

NormKind parse_norm_kind(const std::string& s);
std::string to_string(NormKind k);

// Normalization over (B, C, L) tensors; 4-D inputs are viewed as
// (B, C, H*W). Statistics groups:
//   batch               per channel, over batch and positions
//   instance            per (sample, channel), over positions
//   transposed_instance per (sample, position), over channels
// followed by a per-channel affine map.
class Norm {
 public:
  Norm() = default;
  Norm(std::string name, NormKind kind, int channels, double eps = 1e-5,
       double momentum = 0.1);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(std::vector<Param*>& out);
  void collect_buffers(std::vector<Buffer>& out);
  void set_training(bool t) { training_ = t; }
  NormKind kind() const { return kind_; }
  Param& gamma() { return gamma_; }
  Param& beta() { return beta_; }

  // Normalized values (before the affine map) from the last forward call.
  const Tensor& normalized() const { return xhat_; }

 private:
  NormKind kind_ = NormKind::none;
  int channels_ = 0;
  double eps_ = 1e-5, momentum_ = 0.1;
  bool training_ = true;
  std::string name_;
  Param gamma_, beta_;
  Tensor running_mean_, running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
  std::vector<int> in_shape_;
  bool used_running_ = false;
};

// Nearest-neighbour x2 upsampling along the last axis, cropped to `target`.
class Upsample {
 public:
  Tensor forward(const Tensor& x, int target);
  Tensor backward(const Tensor& gy);

 private:
  int in_len_ = 0;
};

// conv -> norm -> LeakyReLU
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, int in_ch, int out_ch, int kernel,
            int stride, NormKind norm);

  void init(Rng& rng) { conv_.init(rng); }
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);
  void collect(std::vector<Param*>& out);
  void collect_buffers(std::vector<Buffer>& out) { norm_.collect_buffers(out); }
  void set_training(bool t) { norm_.set_training(t); }
  Conv1d& conv() { return conv_; }
  Norm& norm() { return norm_; }
  bool has_norm() const { return has_norm_; }

 private:
  Conv1d conv_;
  Norm norm_;
  bool has_norm_ = false;
  LeakyRelu act_;
};

}  // namespace sdt
