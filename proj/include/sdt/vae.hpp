#pragma once

#include <string>
#include <vector>

#include "sdt/gesture.hpp"
#include "sdt/nn.hpp"
#include "sdt/rng.hpp"
#include "sdt/templates.hpp"
#include "sdt/tensor.hpp"

namespace sdt {

struct VaeConfig {
  std::string layout = "upper_body_v1";
  int template_dim = 32;  // C
  int frames = 64;        // F
  int base_channels = 32;
  int max_channels = 256;
  bool hierarchical = true;
  double beta = 1.0;  // weight of the KL term

  int keypoints() const;
  void validate() const;
};

struct LatentStats {
  Tensor mu;       // (B, C)
  Tensor log_var;  // (B, C)
};

struct VaeLoss {
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

// Closed form KL(N(mu, exp(lv)) || N(0, I)) averaged over the batch rows.
double gaussian_kl(const LatentStats& s);

// Fully 1-D convolutional sequence VAE. Encoder: stride-2 convolutions down
// to one frame, then linear mu / log-variance heads. Decoder: a linear map
// from the template vector (the matrix used for closed-form factorization),
// then upsample + convolution levels mirroring the encoder.
class GestureVae {
 public:
  GestureVae() = default;
  explicit GestureVae(VaeConfig cfg);

  const VaeConfig& config() const { return cfg_; }
  const LayoutPtr& layout() const { return layout_; }
  void init(Rng& rng);

  // x: (B, 2K, F) absolute coordinates.
  LatentStats encode(const Tensor& x);
  // z: (B, C) -> (B, 2K, F) absolute coordinates.
  Tensor decode(const Tensor& z);

  // Working representation (offsets when hierarchical).
  Tensor to_representation(const Tensor& x) const;
  Tensor from_representation(const Tensor& rep) const;
  LatentStats encode_representation(const Tensor& rep);
  Tensor decode_representation(const Tensor& z);

  void encode_backward(const Tensor& g_mu, const Tensor& g_log_var);
  Tensor decode_backward(const Tensor& g_rep);

  // Mean-over-frames L1 between decode(z) and target (both representation
  // space), averaged over the batch; g_z receives d(recon)/dz when non-null.
  double reconstruction_loss(const Tensor& z, const Tensor& target_rep, Tensor* g_z);

  // recon (from z = mu + exp(lv / 2) * noise) + beta * kl. Parameter
  // gradients are accumulated when backward is true.
  VaeLoss loss(const Tensor& x, const Tensor& noise, bool backward);

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }
  // Template of one sequence: the encoder mean. Requires a frozen model.
  TemplateVector extract_template(const GestureSequence& seq);
  std::vector<TemplateVector> extract_templates(const std::vector<GestureSequence>& seqs);

  // First affine map of the decoder: (hidden, C) weight.
  const Tensor& decoder_input_weight() const { return dec_in_.weight().value; }
  Linear& decoder_input() { return dec_in_; }
  Linear& mu_head() { return mu_head_; }
  Linear& log_var_head() { return lv_head_; }

  std::vector<Param*> parameters();
  void zero_grad();

 private:
  VaeConfig cfg_;
  LayoutPtr layout_;
  std::vector<int> lengths_;  // encoder lengths per level
  std::vector<int> widths_;
  std::vector<ConvBlock> enc_;
  Linear mu_head_, lv_head_;
  Linear dec_in_;
  LeakyRelu dec_in_act_;
  std::vector<Upsample> dec_up_;
  std::vector<ConvBlock> dec_;
  Conv1d dec_head_;
  bool frozen_ = false;
};

// Batch helpers: sequences <-> (B, 2K, F).
Tensor stack_sequences(const std::vector<GestureSequence>& seqs);
std::vector<GestureSequence> unstack_sequences(const LayoutPtr& layout, const Tensor& t,
                                               double fps = 15.0);

}  // namespace sdt
