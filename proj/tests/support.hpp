#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sdt/error.hpp"
#include "sdt/generator.hpp"
#include "sdt/gesture.hpp"
#include "sdt/rng.hpp"
#include "sdt/synth.hpp"
#include "sdt/tensor.hpp"
#include "sdt/train.hpp"
#include "sdt/vae.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    sdt::Rng r(static_cast<std::uint64_t>(std::hash<std::string>{}(tag)) ^
               static_cast<std::uint64_t>(::getpid()));
    path = fs::temp_directory_path() / ("sdt_" + tag + "_" + std::to_string(r.next_u64() % 1000000));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path operator/(const std::string& s) const { return path / s; }
};

// Error category thrown by f, or 0 when it returns normally.
template <class F>
int error_kind(F&& f) {
  try {
    f();
  } catch (const sdt::Error& e) {
    return static_cast<int>(e.kind());
  }
  return 0;
}
inline constexpr int kUsage = 2, kData = 3, kNumeric = 4;

inline sdt::Tensor random_tensor(std::vector<int> shape, sdt::Rng& rng, double scale = 1.0) {
  sdt::Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

inline sdt::GestureSequence random_sequence(const std::string& layout, int frames, sdt::Rng& rng,
                                            double lo = 0.2, double hi = 0.8) {
  sdt::GestureSequence s(sdt::layout_by_name(layout), frames);
  for (auto& v : s.coords) v = rng.uniform(lo, hi);
  return s;
}

// Central difference of f with respect to x[i].
inline double central_diff(const std::function<double()>& f, double& x, double h) {
  const double keep = x;
  x = keep + h;
  const double fp = f();
  x = keep - h;
  const double fm = f();
  x = keep;
  return (fp - fm) / (2 * h);
}

// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Small generator that keeps gradient checks and shape tests fast.
inline sdt::GeneratorConfig tiny_generator(sdt::TemplateMode mode = sdt::TemplateMode::clip,
                                           sdt::NormKind norm = sdt::NormKind::transposed_instance) {
  sdt::GeneratorConfig g;
  g.layout = "toy_v1";
  g.template_dim = mode == sdt::TemplateMode::none ? 0 : 4;
  g.template_mode = mode;
  g.audio_feature_dim = 8;
  g.encoder_layers = 3;
  g.decoder_layers = 2;
  g.base_channels = 4;
  g.max_channels = 8;
  g.mel_bins = 8;
  g.audio_conv2d_layers = 2;
  g.audio_base_channels = 2;
  g.norm = norm;
  return g;
}

inline sdt::VaeConfig tiny_vae(int frames = 16) {
  sdt::VaeConfig v;
  v.layout = "toy_v1";
  v.template_dim = 4;
  v.frames = frames;
  v.base_channels = 4;
  v.max_channels = 8;
  return v;
}

// Synthetic clips straight into memory, skipping the file round trip.
inline sdt::Dataset synth_memory(const sdt::SynthConfig& sc, const sdt::MelConfig& mel) {
  sdt::Dataset d;
  d.layout = sdt::layout_by_name(sc.layout);
  for (int i = 0; i < sc.n_clips; ++i) {
    sdt::SynthClip c = sdt::synth_clip(sc, i);
    sdt::TrainingClip t;
    t.clip_id = c.record.clip_id;
    t.split = c.split;
    t.gesture = c.record.gesture;
    t.mel = sdt::mel_spectrogram(c.audio, mel, t.gesture.frames).values;
    d.clips.push_back(std::move(t));
  }
  return d;
}

// Desk-scale preset shared by the trend checks and the README example.
inline sdt::TrainConfig desk_train_config(sdt::Variant v, std::uint64_t seed) {
  sdt::TrainConfig tc;
  tc.variant = v;
  tc.batch_size = 8;
  tc.epochs = 30;
  tc.lr = 2e-3;
  tc.lr_drops = {};
  tc.seed = seed;
  tc.template_lr_scale = 20;
  auto& g = tc.generator;
  g.layout = "toy_v1";
  g.template_dim = 16;
  g.audio_feature_dim = 32;
  g.encoder_layers = 4;
  g.decoder_layers = 3;
  g.base_channels = 16;
  g.max_channels = 64;
  g.mel_bins = 32;
  g.audio_conv2d_layers = 2;
  g.audio_base_channels = 4;
  g.norm = sdt::NormKind::none;
  return tc;
}

inline sdt::VaeTrainConfig desk_vae_config(std::uint64_t seed) {
  sdt::VaeTrainConfig vc;
  vc.vae.layout = "toy_v1";
  vc.vae.template_dim = 16;
  vc.vae.base_channels = 16;
  vc.vae.max_channels = 64;
  vc.vae.beta = 0.02;
  vc.epochs = 30;
  vc.batch_size = 16;
  vc.lr = 2e-3;
  vc.seed = seed;
  return vc;
}

}  // namespace testutil
