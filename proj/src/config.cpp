#include <set>

#include "sdt/error.hpp"
#include "sdt/train.hpp"

namespace sdt {

using nlohmann::json;

Variant parse_variant(const std::string& s) {
  if (s == "plain") return Variant::plain;
  if (s == "bp_clip") return Variant::bp_clip;
  if (s == "bp_frame") return Variant::bp_frame;
  if (s == "vae_template") return Variant::vae_template;
  fail_usage("unknown variant '" + s + "' (expected plain, bp_clip, bp_frame, vae_template)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::plain: return "plain";
    case Variant::bp_clip: return "bp_clip";
    case Variant::bp_frame: return "bp_frame";
    case Variant::vae_template: return "vae_template";
  }
  return "?";
}

TemplateMode template_mode_for(Variant v) {
  switch (v) {
    case Variant::plain: return TemplateMode::none;
    case Variant::bp_frame: return TemplateMode::frame;
    default: return TemplateMode::clip;
  }
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) fail_usage(where + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) fail_usage(where + ": unknown key '" + k + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    fail_usage(where + "." + key + ": wrong type");
  }
}

json generator_to_json(const GeneratorConfig& g) {
  return {{"layout", g.layout},
          {"template_dim", g.template_dim},
          {"template_mode", to_string(g.template_mode)},
          {"audio_feature_dim", g.audio_feature_dim},
          {"encoder_layers", g.encoder_layers},
          {"decoder_layers", g.decoder_layers},
          {"base_channels", g.base_channels},
          {"max_channels", g.max_channels},
          {"norm", to_string(g.norm)},
          {"hierarchical", g.hierarchical},
          {"mel_bins", g.mel_bins},
          {"frames_per_pose_frame", g.frames_per_pose_frame},
          {"audio_conv2d_layers", g.audio_conv2d_layers},
          {"audio_base_channels", g.audio_base_channels}};
}

GeneratorConfig generator_from_json(const json& j, const std::string& where) {
  check_keys(j,
             {"layout", "template_dim", "template_mode", "audio_feature_dim", "encoder_layers",
              "decoder_layers", "base_channels", "max_channels", "norm", "hierarchical",
              "mel_bins", "frames_per_pose_frame", "audio_conv2d_layers", "audio_base_channels"},
             where);
  GeneratorConfig g;
  read(j, "layout", g.layout, where);
  read(j, "template_dim", g.template_dim, where);
  std::string mode = to_string(g.template_mode), norm = to_string(g.norm);
  read(j, "template_mode", mode, where);
  read(j, "norm", norm, where);
  g.template_mode = parse_template_mode(mode);
  g.norm = parse_norm_kind(norm);
  read(j, "audio_feature_dim", g.audio_feature_dim, where);
  read(j, "encoder_layers", g.encoder_layers, where);
  read(j, "decoder_layers", g.decoder_layers, where);
  read(j, "base_channels", g.base_channels, where);
  read(j, "max_channels", g.max_channels, where);
  read(j, "hierarchical", g.hierarchical, where);
  read(j, "mel_bins", g.mel_bins, where);
  read(j, "frames_per_pose_frame", g.frames_per_pose_frame, where);
  read(j, "audio_conv2d_layers", g.audio_conv2d_layers, where);
  read(j, "audio_base_channels", g.audio_base_channels, where);
  return g;
}

// mel_bins and r live in the generator section only.
json mel_to_json(const MelConfig& m) {
  return {{"sample_rate", m.sample_rate}, {"window", m.window}, {"fft_size", m.fft_size},
          {"fmin", m.fmin},               {"fmax", m.fmax},     {"fps", m.fps},
          {"eps", m.eps}};
}

MelConfig mel_from_json(const json& j, const std::string& where) {
  check_keys(j, {"sample_rate", "window", "fft_size", "fmin", "fmax", "fps", "eps"}, where);
  MelConfig m;
  read(j, "sample_rate", m.sample_rate, where);
  read(j, "window", m.window, where);
  read(j, "fft_size", m.fft_size, where);
  read(j, "fmin", m.fmin, where);
  read(j, "fmax", m.fmax, where);
  read(j, "fps", m.fps, where);
  read(j, "eps", m.eps, where);
  return m;
}

json vae_config_to_json(const VaeConfig& v) {
  return {{"layout", v.layout},
          {"template_dim", v.template_dim},
          {"frames", v.frames},
          {"base_channels", v.base_channels},
          {"max_channels", v.max_channels},
          {"hierarchical", v.hierarchical},
          {"beta", v.beta}};
}

VaeConfig vae_config_from_json(const json& j, const std::string& where) {
  check_keys(j,
             {"layout", "template_dim", "frames", "base_channels", "max_channels", "hierarchical",
              "beta"},
             where);
  VaeConfig v;
  read(j, "layout", v.layout, where);
  read(j, "template_dim", v.template_dim, where);
  read(j, "frames", v.frames, where);
  read(j, "base_channels", v.base_channels, where);
  read(j, "max_channels", v.max_channels, where);
  read(j, "hierarchical", v.hierarchical, where);
  read(j, "beta", v.beta, where);
  return v;
}

}  // namespace

json vae_config_json(const VaeConfig& v) { return vae_config_to_json(v); }
VaeConfig vae_config_parse(const json& j) { return vae_config_from_json(j, "vae"); }

GeneratorConfig TrainConfig::effective_generator() const {
  GeneratorConfig g = generator;
  g.template_mode = template_mode_for(variant);
  return g;
}

MelConfig TrainConfig::effective_mel() const {
  MelConfig m = mel;
  m.mel_bins = generator.mel_bins;
  m.frames_per_pose_frame = generator.frames_per_pose_frame;
  return m;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) fail_usage("lr must be > 0");
  if (!(lambda_reg >= 0.0) || !(lambda_kl >= 0.0)) fail_usage("loss weights must be >= 0");
  if (batch_size < 1) fail_usage("batch_size must be >= 1");
  if (!(template_lr_scale > 0.0)) fail_usage("template_lr_scale must be > 0");
  if (epochs < 0) fail_usage("epochs must be >= 0");
  if (checkpoint_every < 0) fail_usage("checkpoint_every must be >= 0");
  for (const auto& d : lr_drops) {
    if (d.epoch < 0 || !(d.factor > 0.0)) fail_usage("lr_drops need epoch >= 0 and factor > 0");
  }
  effective_generator().validate();
  effective_mel().validate();
}

json TrainConfig::to_json() const {
  json drops = json::array();
  for (const auto& d : lr_drops) drops.push_back({{"epoch", d.epoch}, {"factor", d.factor}});
  return {{"variant", to_string(variant)},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"lr", lr},
          {"lr_drops", drops},
          {"lambda_reg", lambda_reg},
          {"lambda_kl", lambda_kl},
          {"seed", seed},
          {"manifest", manifest},
          {"vae_checkpoint", vae_checkpoint},
          {"grad_clip", grad_clip},
          {"template_lr_scale", template_lr_scale},
          {"checkpoint_every", checkpoint_every},
          {"out", out},
          {"log", log},
          {"generator", generator_to_json(generator)},
          {"mel", mel_to_json(mel)}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  const std::string where = "config";
  check_keys(j,
             {"variant", "batch_size", "epochs", "lr", "lr_drops", "lambda_reg", "lambda_kl", "seed",
              "manifest", "vae_checkpoint", "grad_clip", "template_lr_scale", "checkpoint_every", "out",
              "log", "generator", "mel"},
             where);
  TrainConfig c;
  std::string variant = to_string(c.variant);
  read(j, "variant", variant, where);
  c.variant = parse_variant(variant);
  read(j, "batch_size", c.batch_size, where);
  read(j, "epochs", c.epochs, where);
  read(j, "lr", c.lr, where);
  if (j.contains("lr_drops")) {
    const json& d = j.at("lr_drops");
    if (!d.is_array()) fail_usage("config.lr_drops: expected an array");
    c.lr_drops.clear();
    for (const auto& e : d) {
      check_keys(e, {"epoch", "factor"}, "config.lr_drops[]");
      LrDrop drop{0, 1.0};
      read(e, "epoch", drop.epoch, "config.lr_drops[]");
      read(e, "factor", drop.factor, "config.lr_drops[]");
      c.lr_drops.push_back(drop);
    }
  }
  read(j, "lambda_reg", c.lambda_reg, where);
  read(j, "lambda_kl", c.lambda_kl, where);
  read(j, "seed", c.seed, where);
  read(j, "manifest", c.manifest, where);
  read(j, "vae_checkpoint", c.vae_checkpoint, where);
  read(j, "grad_clip", c.grad_clip, where);
  read(j, "template_lr_scale", c.template_lr_scale, where);
  read(j, "checkpoint_every", c.checkpoint_every, where);
  read(j, "out", c.out, where);
  read(j, "log", c.log, where);
  if (j.contains("generator")) c.generator = generator_from_json(j.at("generator"), "config.generator");
  if (j.contains("mel")) c.mel = mel_from_json(j.at("mel"), "config.mel");
  c.validate();
  return c;
}

double learning_rate_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (const auto& d : cfg.lr_drops) {
    if (epoch > d.epoch) lr *= d.factor;
  }
  return lr;
}

json VaeTrainConfig::to_json() const {
  return {{"vae", vae_config_to_json(vae)}, {"manifest", manifest}, {"epochs", epochs},
          {"batch_size", batch_size},       {"lr", lr},             {"seed", seed},
          {"out", out},                     {"log", log}};
}

VaeTrainConfig VaeTrainConfig::from_json(const json& j) {
  const std::string where = "config";
  check_keys(j, {"vae", "manifest", "epochs", "batch_size", "lr", "seed", "out", "log"}, where);
  VaeTrainConfig c;
  if (j.contains("vae")) c.vae = vae_config_from_json(j.at("vae"), "config.vae");
  read(j, "manifest", c.manifest, where);
  read(j, "epochs", c.epochs, where);
  read(j, "batch_size", c.batch_size, where);
  read(j, "lr", c.lr, where);
  read(j, "seed", c.seed, where);
  read(j, "out", c.out, where);
  read(j, "log", c.log, where);
  if (!(c.lr > 0.0)) fail_usage("lr must be > 0");
  if (c.batch_size < 2) fail_usage("batch_size must be >= 2");
  if (c.epochs < 0) fail_usage("epochs must be >= 0");
  c.vae.validate();
  return c;
}

json parse_config_text(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail_usage(where + ": invalid JSON: " + e.what());
  }
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    fail_usage("override '" + assignment + "' must look like key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;  // bare strings need no quotes
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) fail_usage("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) fail_usage("override '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

}  // namespace sdt
