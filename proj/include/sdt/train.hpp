#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdt/audio.hpp"
#include "sdt/checkpoint.hpp"
#include "sdt/generator.hpp"
#include "sdt/metrics.hpp"
#include "sdt/rng.hpp"
#include "sdt/templates.hpp"
#include "sdt/vae.hpp"

namespace sdt {

enum class Variant { plain, bp_clip, bp_frame, vae_template };
Variant parse_variant(const std::string& s);
std::string to_string(Variant v);
TemplateMode template_mode_for(Variant v);

struct LrDrop {
  int epoch;      // drop applies to every epoch after this one (1-based)
  double factor;  // multiplier
};

struct TrainConfig {
  Variant variant = Variant::bp_clip;
  int batch_size = 32;
  int epochs = 100;
  double lr = 1e-4;
  std::vector<LrDrop> lr_drops = {{90, 0.1}, {98, 0.1}};
  double lambda_reg = 1.0;
  double lambda_kl = 1.0;
  std::uint64_t seed = 0;
  std::string manifest;
  std::string vae_checkpoint;
  double grad_clip = 10.0;  // global norm; <= 0 disables
  double template_lr_scale = 1.0;  // multiplier on lr for the template table
  int checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  std::string out;           // checkpoint path ("" = do not write)
  std::string log;           // JSON-lines loss log ("" = do not write)
  GeneratorConfig generator;
  MelConfig mel;  // mel_bins and r are ignored here

  // Generator config with template_mode forced to match the variant.
  GeneratorConfig effective_generator() const;
  // Mel settings with mel_bins and r taken from the generator section.
  MelConfig effective_mel() const;
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Learning rate for a 1-based epoch.
double learning_rate_at(const TrainConfig& cfg, int epoch);

struct VaeTrainConfig {
  VaeConfig vae;
  std::string manifest;
  int epochs = 100;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::string out;
  std::string log;

  nlohmann::json to_json() const;
  static VaeTrainConfig from_json(const nlohmann::json& j);
};

nlohmann::json vae_config_json(const VaeConfig& v);
VaeConfig vae_config_parse(const nlohmann::json& j);

// Config file helpers: parse JSON text and apply dotted-key overrides
// ("generator.base_channels=16"). Unknown keys are rejected.
nlohmann::json parse_config_text(const std::string& text, const std::string& where);
void apply_override(nlohmann::json& j, const std::string& assignment);

// ---------------------------------------------------------------- data

struct TrainingClip {
  std::string clip_id;
  std::string split;
  GestureSequence gesture;
  Tensor mel;  // (M, r * F)
};

struct Dataset {
  LayoutPtr layout;
  std::vector<TrainingClip> clips;

  std::vector<std::string> ids() const;
  std::vector<GestureSequence> gestures() const;
  Dataset subset(const std::string& split) const;
};

// Loads every manifest clip (split filter "" keeps all) and computes its
// mel spectrogram aligned to the gesture frame count.
Dataset load_dataset(const std::filesystem::path& manifest, const MelConfig& mel,
                     const std::string& split = "");

// Batch gather: (B, M, T) mel and (B, 2K, F) gestures.
Tensor gather_mel(const Dataset& d, std::span<const int> idx);
Tensor gather_gestures(const Dataset& d, std::span<const int> idx);

// ---------------------------------------------------------------- losses

// Mean over batch and frames of the L1 norm of the 2K-dim difference.
double regression_loss(const Tensor& pred, const Tensor& gt, Tensor* grad = nullptr);

struct LossParts {
  double reg = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

// Generator objective on one batch. bp variants pass the bank and batch
// indices (templates are parameters); vae_template passes fixed (B, C)
// templates; plain passes neither. With backward set, gradients are
// accumulated into generator parameters and the bank.
LossParts total_loss(Generator& gen, const Tensor& mel, const Tensor& gt, double lambda_reg,
                     double lambda_kl, TemplateBank* bank, std::span<const int> idx,
                     const Tensor* fixed_templates, bool backward);

// ---------------------------------------------------------------- optimizer

class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void step(const std::vector<Param*>& params, double lr);
  // Per-parameter learning rates (same length as params).
  void step(const std::vector<Param*>& params, const std::vector<double>& lrs);
  long long steps() const { return t_; }

  void save(CheckpointData& ckpt) const;
  void load(const CheckpointData& ckpt);

 private:
  long long t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

// Scales gradients so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(const std::vector<Param*>& params, double max_norm);

// ---------------------------------------------------------------- models

struct TemplateSpec {
  enum class Kind { sample, id, zero, file } kind = Kind::zero;
  std::uint64_t seed = 0;
  std::string value;  // clip id or file path

  // "sample:SEED" | "id:CLIP" | "zero" | "file:PATH"
  static TemplateSpec parse(const std::string& s);
};

struct InferResult {
  GestureSequence gesture;
  std::string warning;
};

// A trained generator together with the templates it samples from.
class GestureModel {
 public:
  TrainConfig config;
  Generator generator;
  // bp_*: learned bank. vae_template: frozen bank of encoded training
  // templates. plain: absent.
  std::optional<TemplateBank> bank;

  static GestureModel create(const TrainConfig& cfg);

  // Template feature (B, C, F) for a resolved spec; empty for plain.
  Tensor template_features(const TemplateSpec& spec, int batch, int frames,
                           std::string* warning = nullptr) const;
  Tensor template_features_for(std::span<const int> bank_idx, int frames) const;

  // Eval-mode forward.
  Tensor predict(const Tensor& mel, const Tensor* template_feat);

  InferResult infer(const AudioClip& audio, const TemplateSpec& spec, bool windowed = false);

  // Mean regression loss on `data` where every clip uses its own template
  // (bank lookup by clip id). Eval mode.
  double eval_regression_loss(const Dataset& data);

  CheckpointData to_checkpoint(const Adam* opt = nullptr, int epoch = 0,
                               const Rng* rng = nullptr);
  static GestureModel from_checkpoint(const CheckpointData& ckpt, Adam* opt = nullptr,
                                      int* epoch = nullptr, Rng* rng = nullptr);
};

struct EpochLog {
  int epoch = 0;
  double reg = 0.0;
  double kl = 0.0;
  double lr = 0.0;

  std::string to_json() const;
};

struct TrainResult {
  GestureModel model;
  std::vector<EpochLog> log;
  Adam optimizer;
};

// In-memory training on a prepared dataset (train split expected). vae is
// required for vae_template and must be frozen.
TrainResult train(const TrainConfig& cfg, const Dataset& train_data, GestureVae* vae = nullptr);
// Full pipeline: load manifest + VAE, train, write checkpoint and log.
TrainResult train(const TrainConfig& cfg);

struct VaeTrainResult {
  GestureVae vae;
  std::vector<EpochLog> log;
};

VaeTrainResult train_vae(const VaeTrainConfig& cfg, const std::vector<GestureSequence>& data);
VaeTrainResult train_vae(const VaeTrainConfig& cfg);

CheckpointData vae_to_checkpoint(GestureVae& vae);
GestureVae vae_from_checkpoint(const CheckpointData& ckpt);
GestureVae load_vae(const std::filesystem::path& path);

// ---------------------------------------------------------------- evaluation

struct EvalOptions {
  std::uint64_t seed = 0;
  bool oracle = false;  // use ground truth as predictions
};

// Predictions for every clip; clip i uses template sample(seed + i).
std::vector<GestureSequence> predict_dataset(GestureModel& model, const Dataset& data,
                                             std::uint64_t seed);
MetricsReport evaluate(GestureModel& model, const Dataset& data, GestureVae& vae,
                       const EvalOptions& opt);
MetricsReport evaluate_predictions(const std::vector<GestureSequence>& pred,
                                   const std::vector<GestureSequence>& gt, GestureVae& vae);

}  // namespace sdt
