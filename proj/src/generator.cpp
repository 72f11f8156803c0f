#include "sdt/generator.hpp"

#include <algorithm>
#include <cmath>

#include "sdt/error.hpp"

namespace sdt {

TemplateMode parse_template_mode(const std::string& s) {
  if (s == "none") return TemplateMode::none;
  if (s == "clip") return TemplateMode::clip;
  if (s == "frame") return TemplateMode::frame;
  fail_usage("unknown template mode '" + s + "' (expected none|clip|frame)");
}

std::string to_string(TemplateMode m) {
  switch (m) {
    case TemplateMode::none: return "none";
    case TemplateMode::clip: return "clip";
    case TemplateMode::frame: return "frame";
  }
  return "none";
}

int GeneratorConfig::keypoints() const { return layout_by_name(layout)->keypoints; }

void GeneratorConfig::validate() const {
  layout_by_name(layout);
  if (template_mode != TemplateMode::none && template_dim < 1) {
    fail_usage("template_dim must be >= 1 when templates are enabled");
  }
  if (template_dim < 0) fail_usage("template_dim must be >= 0");
  if (audio_feature_dim < 1 || base_channels < 1 || max_channels < base_channels ||
      mel_bins < 1 || audio_conv2d_layers < 0 || audio_base_channels < 1) {
    fail_usage("invalid generator widths");
  }
  if (encoder_layers < 1 || decoder_layers != encoder_layers - 1) {
    fail_usage("UNet needs encoder_layers >= 1 and decoder_layers == encoder_layers - 1");
  }
  const int r = frames_per_pose_frame;
  if (r < 1 || (r & (r - 1)) != 0) {
    fail_usage("frames_per_pose_frame must be a power of two");
  }
}

// ---------------------------------------------------------------- audio encoder

AudioEncoder::AudioEncoder(const GeneratorConfig& cfg)
    : mel_bins_(cfg.mel_bins),
      r_(cfg.frames_per_pose_frame),
      mel_mean_({cfg.mel_bins}, 0.0),
      mel_std_({cfg.mel_bins}, 1.0) {
  int ch = 1, freq = cfg.mel_bins;
  for (int i = 0; i < cfg.audio_conv2d_layers; ++i) {
    const int out = cfg.audio_base_channels << i;
    const std::string name = "audio.conv2d." + std::to_string(i);
    blocks2d_.push_back({Conv2d(name + ".conv", ch, out, 3, 3, 2, 1, 1, 1),
                         Norm(name + ".norm", cfg.norm, out), LeakyRelu()});
    ch = out;
    freq = (freq - 1) / 2 + 1;
  }
  int in = ch * freq;
  int strides = 0;
  for (int r = r_; r > 1; r /= 2) ++strides;
  const int n1d = std::max(1, strides);
  for (int i = 0; i < n1d; ++i) {
    blocks1d_.emplace_back("audio.conv1d." + std::to_string(i), in,
                           cfg.audio_feature_dim, 3, i < strides ? 2 : 1, cfg.norm);
    in = cfg.audio_feature_dim;
  }
}

void AudioEncoder::init(Rng& rng) {
  for (auto& b : blocks2d_) b.conv.init(rng);
  for (auto& b : blocks1d_) b.init(rng);
}

int AudioEncoder::receptive_radius() const {
  // Radius in spectrogram columns: +1 per 3x3 layer (time stride 1), then
  // +jump per stride-2 temporal layer.
  int radius = static_cast<int>(blocks2d_.size());
  int jump = 1;
  for (std::size_t i = 0; i < blocks1d_.size(); ++i) {
    radius += jump;
    if (r_ > 1) jump *= 2;
  }
  return (radius + r_ - 1) / r_;
}

namespace {

}  // namespace

Tensor AudioEncoder::forward(const Tensor& mel) {
  if (mel.rank() != 3 || mel.dim(1) != mel_bins_) {
    fail_usage("audio encoder expects (B, " + std::to_string(mel_bins_) +
               ", T) mel input, got " + mel.shape_str());
  }
  if (mel.dim(2) % r_ != 0) {
    fail_usage("misaligned mel input: T = " + std::to_string(mel.dim(2)) +
               " not divisible by r = " + std::to_string(r_));
  }
  // Fixed per-bin affine map; keeps the encoder local in time.
  Tensor x = mel.reshaped({mel.dim(0), 1, mel.dim(1), mel.dim(2)});
  const int t = mel.dim(2);
  for (int b = 0; b < mel.dim(0); ++b) {
    for (int m = 0; m < mel_bins_; ++m) {
      double* p = x.data() + (static_cast<std::size_t>(b) * mel_bins_ + m) * t;
      const double mu = mel_mean_[m], inv = 1.0 / mel_std_[m];
      for (int j = 0; j < t; ++j) p[j] = (p[j] - mu) * inv;
    }
  }
  for (auto& b : blocks2d_) x = b.act.forward(b.norm.forward(b.conv.forward(x)));
  flat_shape_ = x.shape();
  x.reshape({x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
  for (auto& b : blocks1d_) x = b.forward(x);
  return x;
}

Tensor AudioEncoder::backward(const Tensor& g) {
  Tensor x = g;
  for (auto it = blocks1d_.rbegin(); it != blocks1d_.rend(); ++it) x = it->backward(x);
  x.reshape(flat_shape_);
  for (auto it = blocks2d_.rbegin(); it != blocks2d_.rend(); ++it) {
    x = it->conv.backward(it->norm.backward(it->act.backward(x)));
  }
  return x;
}

void AudioEncoder::collect(std::vector<Param*>& out) {
  for (auto& b : blocks2d_) {
    b.conv.collect(out);
    b.norm.collect(out);
  }
  for (auto& b : blocks1d_) b.collect(out);
}

void AudioEncoder::collect_buffers(std::vector<Buffer>& out) {
  out.push_back({"audio.mel_mean", &mel_mean_});
  out.push_back({"audio.mel_std", &mel_std_});
  for (auto& b : blocks2d_) b.norm.collect_buffers(out);
  for (auto& b : blocks1d_) b.collect_buffers(out);
}

void AudioEncoder::set_input_stats(const Tensor& mean, const Tensor& std) {
  if (mean.size() != static_cast<std::size_t>(mel_bins_) || std.size() != mean.size()) {
    fail_usage("mel statistics must have one entry per mel bin");
  }
  for (std::size_t i = 0; i < std.size(); ++i) {
    if (!(std[i] > 0.0) || !std::isfinite(mean[i])) fail_numeric("invalid mel statistics");
  }
  mel_mean_ = mean.reshaped({mel_bins_});
  mel_std_ = std.reshaped({mel_bins_});
}

void AudioEncoder::set_training(bool t) {
  for (auto& b : blocks2d_) b.norm.set_training(t);
  for (auto& b : blocks1d_) b.set_training(t);
}

// ---------------------------------------------------------------- UNet

UNet1d::UNet1d(const GeneratorConfig& cfg, int in_channels, int out_channels) {
  const int n = cfg.encoder_layers;
  std::vector<int> ch(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ch[i] = std::min(cfg.max_channels, cfg.base_channels << std::min(i, 20));
  }
  int in = in_channels;
  for (int i = 0; i < n; ++i) {
    down_.emplace_back("unet.down." + std::to_string(i), in, ch[i], 3, i == 0 ? 1 : 2,
                       cfg.norm);
    in = ch[i];
  }
  skip_channels_ = ch;
  for (int j = 1; j < n; ++j) {
    const int level = n - 1 - j;
    up_.emplace_back("unet.up." + std::to_string(j - 1), in + ch[level], ch[level], 3, 1,
                     cfg.norm);
    upsample_.emplace_back();
    in = ch[level];
  }
  head_ = Conv1d("unet.head", in, out_channels, 1, 1, 0);
}

void UNet1d::init(Rng& rng) {
  for (auto& b : down_) b.init(rng);
  for (auto& b : up_) b.init(rng);
  head_.init(rng);
}

Tensor UNet1d::forward(const Tensor& input) {
  std::vector<Tensor> skips;
  Tensor x = input;
  for (auto& b : down_) {
    x = b.forward(x);
    skips.push_back(x);
  }
  const int n = static_cast<int>(down_.size());
  for (int j = 1; j < n; ++j) {
    const Tensor& skip = skips[static_cast<std::size_t>(n - 1 - j)];
    x = upsample_[j - 1].forward(x, skip.dim(2));
    x = up_[j - 1].forward(concat_channels(x, skip));
  }
  return head_.forward(x);
}

Tensor UNet1d::backward(const Tensor& g) {
  const int n = static_cast<int>(down_.size());
  std::vector<Tensor> skip_grads(static_cast<std::size_t>(n));
  Tensor x = head_.backward(g);
  for (int j = n - 1; j >= 1; --j) {
    const int level = n - 1 - j;
    Tensor gcat = up_[j - 1].backward(x);
    Tensor gup, gskip;
    split_channels(gcat, gcat.dim(1) - skip_channels_[level], gup, gskip);
    skip_grads[level] = std::move(gskip);
    x = upsample_[j - 1].backward(gup);
  }
  for (int i = n - 1; i >= 0; --i) {
    if (!skip_grads[i].empty()) add_inplace(x, skip_grads[i]);
    x = down_[i].backward(x);
  }
  return x;
}

void UNet1d::collect(std::vector<Param*>& out) {
  for (auto& b : down_) b.collect(out);
  for (auto& b : up_) b.collect(out);
  head_.collect(out);
}

void UNet1d::collect_buffers(std::vector<Buffer>& out) {
  for (auto& b : down_) b.collect_buffers(out);
  for (auto& b : up_) b.collect_buffers(out);
}

void UNet1d::set_training(bool t) {
  for (auto& b : down_) b.set_training(t);
  for (auto& b : up_) b.set_training(t);
}

// ---------------------------------------------------------------- templates

Tensor tile_template(std::span<const double> t, int frames) {
  const int c = static_cast<int>(t.size());
  Tensor out({1, c, frames});
  for (int i = 0; i < c; ++i) {
    std::fill_n(out.data() + static_cast<std::size_t>(i) * frames, frames, t[i]);
  }
  return out;
}

Tensor tile_templates(const Tensor& t, int frames) {
  const int batch = t.dim(0), c = t.dim(1);
  Tensor out({batch, c, frames});
  for (int n = 0; n < batch; ++n) {
    for (int i = 0; i < c; ++i) {
      std::fill_n(out.data() + (static_cast<std::size_t>(n) * c + i) * frames, frames,
                  t[static_cast<std::size_t>(n) * c + i]);
    }
  }
  return out;
}

Tensor untile_gradient(const Tensor& g) {
  const int batch = g.dim(0), c = g.dim(1), frames = g.dim(2);
  Tensor out({batch, c});
  for (int n = 0; n < batch; ++n) {
    for (int i = 0; i < c; ++i) {
      double s = 0.0;
      for (int f = 0; f < frames; ++f) s += g.at(n, i, f);
      out[static_cast<std::size_t>(n) * c + i] = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------- generator

Generator::Generator(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  layout_ = layout_by_name(cfg_.layout);
  audio_ = AudioEncoder(cfg_);
  unet_ = UNet1d(cfg_, cfg_.audio_feature_dim + cfg_.template_channels(),
                 2 * layout_->keypoints);
}

void Generator::init(Rng& rng) {
  audio_.init(rng);
  unet_.init(rng);
}

Tensor Generator::encode_audio(const Tensor& mel) { return audio_.forward(mel); }

Tensor Generator::generate(const Tensor& audio_feat, const Tensor* template_feat) {
  if (audio_feat.rank() != 3 || audio_feat.dim(1) != cfg_.audio_feature_dim) {
    fail_usage("generate: audio feature must be (B, " +
               std::to_string(cfg_.audio_feature_dim) + ", F), got " +
               audio_feat.shape_str());
  }
  const int batch = audio_feat.dim(0), frames = audio_feat.dim(2);
  Tensor input;
  if (cfg_.template_mode == TemplateMode::none) {
    if (template_feat && !template_feat->empty()) {
      fail_usage("generate: template feature given but template_mode is none");
    }
    input = audio_feat;
  } else {
    if (!template_feat) fail_usage("generate: template feature required");
    if (template_feat->rank() != 3 || template_feat->dim(1) != cfg_.template_dim) {
      fail_usage("generate: template channel mismatch: expected C = " +
                 std::to_string(cfg_.template_dim) + ", got " + template_feat->shape_str());
    }
    if (template_feat->dim(0) != batch || template_feat->dim(2) != frames) {
      fail_usage("generate: audio and template features disagree on (B, F)");
    }
    input = concat_channels(audio_feat, *template_feat);
  }
  frames_ = frames;
  Tensor raw = unet_.forward(input);
  if (!cfg_.hierarchical) return raw;
  Tensor out(raw.shape());
  const std::size_t block = static_cast<std::size_t>(2 * layout_->keypoints) * frames;
  for (int n = 0; n < batch; ++n) {
    hierarchical_decode(*layout_, frames, std::span(raw.data() + n * block, block),
                        std::span(out.data() + n * block, block));
  }
  return out;
}

Generator::GenerateGrads Generator::backward_generate(const Tensor& g_out) {
  Tensor g_raw = g_out;
  if (cfg_.hierarchical) {
    const int batch = g_out.dim(0);
    const std::size_t block = static_cast<std::size_t>(2 * layout_->keypoints) * frames_;
    for (int n = 0; n < batch; ++n) {
      hierarchical_decode_backward(*layout_, frames_,
                                   std::span(g_out.data() + n * block, block),
                                   std::span(g_raw.data() + n * block, block));
    }
  }
  Tensor g_in = unet_.backward(g_raw);
  GenerateGrads grads;
  if (cfg_.template_mode == TemplateMode::none) {
    grads.audio_feat = std::move(g_in);
  } else {
    split_channels(g_in, cfg_.audio_feature_dim, grads.audio_feat, grads.template_feat);
  }
  return grads;
}

void Generator::backward_audio(const Tensor& g_audio_feat) { audio_.backward(g_audio_feat); }

Tensor Generator::backward(const Tensor& g_out) {
  GenerateGrads g = backward_generate(g_out);
  backward_audio(g.audio_feat);
  return std::move(g.template_feat);
}

std::vector<Param*> Generator::parameters() {
  std::vector<Param*> p;
  audio_.collect(p);
  unet_.collect(p);
  return p;
}

std::vector<Buffer> Generator::buffers() {
  std::vector<Buffer> b;
  audio_.collect_buffers(b);
  unet_.collect_buffers(b);
  return b;
}

void Generator::set_training(bool t) {
  audio_.set_training(t);
  unet_.set_training(t);
}

void Generator::zero_grad() {
  for (Param* p : parameters()) p->zero_grad();
}

}  // namespace sdt
