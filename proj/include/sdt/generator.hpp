#pragma once

#include <span>
#include <string>
#include <vector>

#include "sdt/gesture.hpp"
#include "sdt/nn.hpp"
#include "sdt/rng.hpp"
#include "sdt/tensor.hpp"

namespace sdt {

enum class TemplateMode { none, clip, frame };
TemplateMode parse_template_mode(const std::string& s);
std::string to_string(TemplateMode m);

struct GeneratorConfig {
  std::string layout = "upper_body_v1";
  int template_dim = 32;  // C
  TemplateMode template_mode = TemplateMode::clip;
  int audio_feature_dim = 256;
  int encoder_layers = 7;
  int decoder_layers = 6;
  int base_channels = 64;
  int max_channels = 512;
  NormKind norm = NormKind::transposed_instance;
  bool hierarchical = true;
  // Audio encoder geometry.
  int mel_bins = 64;
  int frames_per_pose_frame = 4;  // r, a power of two
  int audio_conv2d_layers = 3;
  int audio_base_channels = 16;

  int keypoints() const;
  // Template channels fed to the UNet (0 when template_mode is none).
  int template_channels() const {
    return template_mode == TemplateMode::none ? 0 : template_dim;
  }
  void validate() const;
};

// Mel batch (B, M, T) -> audio features (B, audio_feature_dim, T / r).
class AudioEncoder {
 public:
  AudioEncoder() = default;
  explicit AudioEncoder(const GeneratorConfig& cfg);

  void init(Rng& rng);
  Tensor forward(const Tensor& mel);
  Tensor backward(const Tensor& g);
  void collect(std::vector<Param*>& out);
  void collect_buffers(std::vector<Buffer>& out);
  void set_training(bool t);
  // Per-bin input normalization (x - mean) / std, stored as buffers.
  void set_input_stats(const Tensor& mean, const Tensor& std);

  // Pose frames on each side of an output frame that can influence it.
  int receptive_radius() const;

 private:
  struct Block2d {
    Conv2d conv;
    Norm norm;
    LeakyRelu act;
  };
  int mel_bins_ = 0, r_ = 1;
  Tensor mel_mean_, mel_std_;
  std::vector<Block2d> blocks2d_;
  std::vector<ConvBlock> blocks1d_;
  std::vector<int> flat_shape_;
};

// Temporal UNet: encoder levels at lengths F, ceil(F/2), ...; decoder levels
// upsample and concatenate the matching encoder output; 1x1 linear head.
class UNet1d {
 public:
  UNet1d() = default;
  UNet1d(const GeneratorConfig& cfg, int in_channels, int out_channels);

  void init(Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& g);
  void collect(std::vector<Param*>& out);
  void collect_buffers(std::vector<Buffer>& out);
  void set_training(bool t);

 private:
  std::vector<ConvBlock> down_;
  std::vector<ConvBlock> up_;
  std::vector<Upsample> upsample_;
  std::vector<int> skip_channels_;
  Conv1d head_;
};

// Replicate t (C values) along F frames: (1, C, F).
Tensor tile_template(std::span<const double> t, int frames);
// Batched tiling of (B, C) templates to (B, C, F), and its adjoint.
Tensor tile_templates(const Tensor& t, int frames);
Tensor untile_gradient(const Tensor& g);

class Generator {
 public:
  Generator() = default;
  explicit Generator(GeneratorConfig cfg);

  const GeneratorConfig& config() const { return cfg_; }
  const LayoutPtr& layout() const { return layout_; }

  void init(Rng& rng);

  // (B, M, T) -> (B, audio_feature_dim, F). T must be divisible by r.
  Tensor encode_audio(const Tensor& mel);
  // [A|T] -> (B, 2K, F) absolute coordinates (hierarchical outputs decoded).
  // template_feat may be null only when template_mode is none.
  Tensor generate(const Tensor& audio_feat, const Tensor* template_feat);
  Tensor forward(const Tensor& mel, const Tensor* template_feat) {
    return generate(encode_audio(mel), template_feat);
  }

  struct GenerateGrads {
    Tensor audio_feat;
    Tensor template_feat;  // empty when template_mode is none
  };
  GenerateGrads backward_generate(const Tensor& g_out);
  void backward_audio(const Tensor& g_audio_feat);
  // Full backward; returns dL/d(template feature).
  Tensor backward(const Tensor& g_out);

  std::vector<Param*> parameters();
  std::vector<Buffer> buffers();
  void set_training(bool t);
  void zero_grad();
  void set_mel_stats(const Tensor& mean, const Tensor& std) { audio_.set_input_stats(mean, std); }

  int audio_receptive_radius() const { return audio_.receptive_radius(); }

 private:
  GeneratorConfig cfg_;
  LayoutPtr layout_;
  AudioEncoder audio_;
  UNet1d unet_;
  int frames_ = 0;
};

}  // namespace sdt
