#include <algorithm>
#include <cmath>
#include <set>

#include "sdt/error.hpp"
#include "sdt/train.hpp"

namespace sdt {

using nlohmann::json;

TemplateSpec TemplateSpec::parse(const std::string& s) {
  TemplateSpec t;
  const auto colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : s.substr(colon + 1);
  if (kind == "zero" && colon == std::string::npos) {
    t.kind = Kind::zero;
  } else if (kind == "sample") {
    t.kind = Kind::sample;
    try {
      std::size_t used = 0;
      t.seed = std::stoull(arg, &used);
      if (used != arg.size()) throw std::invalid_argument(arg);
    } catch (const std::exception&) {
      fail_usage("template spec '" + s + "': sample needs an unsigned integer seed");
    }
  } else if ((kind == "id" || kind == "file") && !arg.empty()) {
    t.kind = kind == "id" ? Kind::id : Kind::file;
    t.value = arg;
  } else {
    fail_usage("template spec '" + s + "' must be sample:SEED, id:CLIP, zero or file:PATH");
  }
  return t;
}

GestureModel GestureModel::create(const TrainConfig& cfg) {
  cfg.validate();
  GestureModel m;
  m.config = cfg;
  m.generator = Generator(cfg.effective_generator());
  Rng rng = Rng::derive(cfg.seed, 0x0bd3, 0);
  m.generator.init(rng);
  return m;
}

namespace {

// File templates: a flat list of C numbers, or (frame mode) a list of
// C-vectors, optionally wrapped as {"template": ...}.
Tensor file_template(const std::string& path, const GeneratorConfig& g, int batch, int frames) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    fail_data(path + ": " + e.what());
  }
  if (j.is_object() && j.contains("template")) j = j.at("template");
  const int c = g.template_dim;
  std::vector<std::vector<double>> rows;
  try {
    if (j.is_array() && !j.empty() && j.front().is_array()) {
      rows = j.get<std::vector<std::vector<double>>>();
    } else {
      rows.push_back(j.get<std::vector<double>>());
    }
  } catch (const json::exception&) {
    fail_data(path + ": template must be an array of numbers");
  }
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != c) {
      fail_data(path + ": template has " + std::to_string(r.size()) + " values, expected " +
                std::to_string(c));
    }
    for (double v : r) {
      if (!std::isfinite(v)) fail_data(path + ": non-finite template value");
    }
  }
  if (rows.size() > 1 && g.template_mode != TemplateMode::frame) {
    fail_data(path + ": per-frame templates need a bp_frame model");
  }
  Tensor out({batch, c, frames});
  for (int b = 0; b < batch; ++b) {
    for (int f = 0; f < frames; ++f) {
      const auto& r = rows[static_cast<std::size_t>(f) % rows.size()];
      for (int k = 0; k < c; ++k) out.at(b, k, f) = r[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

}  // namespace

Tensor GestureModel::template_features_for(std::span<const int> bank_idx, int frames) const {
  if (!bank) return {};
  return bank->features(bank_idx, frames);
}

Tensor GestureModel::template_features(const TemplateSpec& spec, int batch, int frames,
                                       std::string* warning) const {
  const GeneratorConfig g = config.effective_generator();
  if (g.template_mode == TemplateMode::none) {
    if (warning && spec.kind != TemplateSpec::Kind::zero) {
      *warning = "variant plain has no templates; template spec ignored";
    }
    return {};
  }
  switch (spec.kind) {
    case TemplateSpec::Kind::zero:
      return Tensor({batch, g.template_dim, frames});
    case TemplateSpec::Kind::file:
      return file_template(spec.value, g, batch, frames);
    case TemplateSpec::Kind::sample:
    case TemplateSpec::Kind::id: {
      if (!bank) fail_data("model has no template bank");
      const int i = spec.kind == TemplateSpec::Kind::id ? bank->index_of(spec.value)
                                                        : sample_template_index(*bank, spec.seed);
      const std::vector<int> idx(static_cast<std::size_t>(batch), i);
      return bank->features(idx, frames);
    }
  }
  return {};
}

Tensor GestureModel::predict(const Tensor& mel, const Tensor* template_feat) {
  generator.set_training(false);
  const bool has = template_feat && !template_feat->empty();
  return generator.forward(mel, has ? template_feat : nullptr);
}

namespace {

constexpr int kWindow = 64;
constexpr int kOverlap = 8;

Tensor slice_frames(const Tensor& t, int a, int b, int per_frame = 1) {
  const int c = t.dim(1), len = t.dim(2);
  const int w = (b - a) * per_frame;
  Tensor out({t.dim(0), c, w});
  for (int n = 0; n < t.dim(0); ++n) {
    for (int k = 0; k < c; ++k) {
      const double* src = t.data() + (static_cast<std::size_t>(n) * c + k) * len + a * per_frame;
      std::copy(src, src + w, out.data() + (static_cast<std::size_t>(n) * c + k) * w);
    }
  }
  return out;
}

}  // namespace

InferResult GestureModel::infer(const AudioClip& audio, const TemplateSpec& spec, bool windowed) {
  const MelConfig mcfg = config.effective_mel();
  if (audio.sample_rate != mcfg.sample_rate) {
    fail_data("audio sample rate " + std::to_string(audio.sample_rate) + " does not match " +
              std::to_string(mcfg.sample_rate));
  }
  const MelSpectrogram spec_mel = mel_spectrogram(audio, mcfg);
  const int frames = spec_mel.pose_frames;
  if (frames < 1) fail_data("audio is shorter than one pose frame");
  InferResult res;
  const Tensor mel = spec_mel.values.reshaped({1, spec_mel.mel_bins, spec_mel.time_frames()});
  const Tensor feat = template_features(spec, 1, frames, &res.warning);
  const Tensor* fp = feat.empty() ? nullptr : &feat;
  const int r = mcfg.frames_per_pose_frame;

  Tensor out;
  if (!windowed || frames <= kWindow) {
    out = predict(mel, fp);
  } else {
    // Windows of kWindow frames overlapping by kOverlap; linear crossfade.
    const int channels = 2 * generator.config().keypoints();
    out = Tensor({1, channels, frames});
    std::vector<double> weight(static_cast<std::size_t>(frames), 0.0);
    std::vector<int> starts;
    for (int s = 0;; s += kWindow - kOverlap) {
      if (s + kWindow >= frames) {
        starts.push_back(frames - kWindow);
        break;
      }
      starts.push_back(s);
    }
    for (std::size_t w = 0; w < starts.size(); ++w) {
      const int a = starts[w], b = a + kWindow;
      const Tensor wm = slice_frames(mel, a, b, r);
      Tensor wf;
      if (fp) wf = slice_frames(feat, a, b);
      const Tensor y = predict(wm, fp ? &wf : nullptr);
      const int prev_end = w > 0 ? starts[w - 1] + kWindow : a;
      const int next_start = w + 1 < starts.size() ? starts[w + 1] : b;
      for (int f = a; f < b; ++f) {
        double wt = 1.0;
        if (f < prev_end) wt = std::min(wt, (f - a + 1.0) / (prev_end - a + 1.0));
        if (f >= next_start) wt = std::min(wt, (b - f) / (b - next_start + 1.0));
        weight[static_cast<std::size_t>(f)] += wt;
        for (int c = 0; c < channels; ++c) out.at(0, c, f) += wt * y.at(0, c, f - a);
      }
    }
    for (int c = 0; c < channels; ++c) {
      for (int f = 0; f < frames; ++f) out.at(0, c, f) /= weight[static_cast<std::size_t>(f)];
    }
  }
  res.gesture = GestureSequence::from_channels(generator.layout(), out, 0, mcfg.fps);
  return res;
}

double GestureModel::eval_regression_loss(const Dataset& data) {
  double total = 0.0;
  std::size_t count = 0;
  constexpr std::size_t kChunk = 16;
  for (std::size_t s = 0; s < data.clips.size(); s += kChunk) {
    std::vector<int> idx;
    std::vector<int> bank_idx;
    for (std::size_t i = s; i < std::min(data.clips.size(), s + kChunk); ++i) {
      idx.push_back(static_cast<int>(i));
      if (bank) bank_idx.push_back(bank->index_of(data.clips[i].clip_id));
    }
    const Tensor mel = gather_mel(data, idx);
    const Tensor gt = gather_gestures(data, idx);
    const Tensor feat = template_features_for(bank_idx, gt.dim(2));
    const Tensor pred = predict(mel, feat.empty() ? nullptr : &feat);
    total += regression_loss(pred, gt) * static_cast<double>(idx.size());
    count += idx.size();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

CheckpointData GestureModel::to_checkpoint(const Adam* opt, int epoch, const Rng* rng) {
  CheckpointData ckpt;
  ckpt.meta = {{"kind", "generator"}, {"config", config.to_json()}, {"epoch", epoch}};
  if (rng) ckpt.meta["rng"] = rng->state();
  std::set<std::string> seen;
  auto add = [&](const std::string& name, const Tensor& t) {
    if (!seen.insert(name).second) fail_usage("duplicate tensor name '" + name + "'");
    ckpt.add(name, t);
  };
  for (Param* p : generator.parameters()) add(p->name, p->value);
  for (const Buffer& b : generator.buffers()) add(b.name, *b.value);
  if (bank) {
    ckpt.meta["bank"] = {{"mode", to_string(bank->mode())}, {"dim", bank->dim()},
                         {"frames", bank->frames()},        {"ids", bank->ids()},
                         {"frozen", bank->frozen()}};
    add("templates", bank->table().value);
  }
  if (opt) opt->save(ckpt);
  return ckpt;
}

GestureModel GestureModel::from_checkpoint(const CheckpointData& ckpt, Adam* opt, int* epoch,
                                           Rng* rng) {
  if (ckpt.meta.value("kind", "") != "generator") fail_data("checkpoint is not a generator checkpoint");
  GestureModel m = create(TrainConfig::from_json(ckpt.meta.at("config")));
  auto load = [&](const std::string& name, Tensor& dst) {
    const Tensor& t = ckpt.get(name);
    if (!t.same_shape(dst)) fail_data("checkpoint tensor '" + name + "' has shape " + t.shape_str());
    dst = t;
  };
  for (Param* p : m.generator.parameters()) load(p->name, p->value);
  for (const Buffer& b : m.generator.buffers()) load(b.name, *b.value);
  if (ckpt.meta.contains("bank")) {
    const json& b = ckpt.meta.at("bank");
    TemplateBank bank = TemplateBank::init(b.at("ids").get<std::vector<std::string>>(),
                                           b.at("dim").get<int>(),
                                           parse_template_mode(b.at("mode").get<std::string>()),
                                           b.at("frames").get<int>());
    load("templates", bank.table().value);
    if (b.value("frozen", false)) bank.freeze();
    m.bank = std::move(bank);
  }
  if (opt) opt->load(ckpt);
  if (epoch) *epoch = ckpt.meta.value("epoch", 0);
  if (rng && ckpt.meta.contains("rng")) rng->set_state(ckpt.meta.at("rng").get<std::string>());
  m.generator.set_training(false);
  return m;
}

// ---------------------------------------------------------------- evaluation

std::vector<GestureSequence> predict_dataset(GestureModel& model, const Dataset& data,
                                             std::uint64_t seed) {
  std::vector<GestureSequence> out;
  constexpr std::size_t kChunk = 16;
  for (std::size_t s = 0; s < data.clips.size(); s += kChunk) {
    std::vector<int> idx, bank_idx;
    for (std::size_t i = s; i < std::min(data.clips.size(), s + kChunk); ++i) {
      idx.push_back(static_cast<int>(i));
      if (model.bank) bank_idx.push_back(sample_template_index(*model.bank, seed + i));
    }
    const Tensor mel = gather_mel(data, idx);
    const int frames = data.clips[s].gesture.frames;
    const Tensor feat = model.template_features_for(bank_idx, frames);
    const Tensor pred = model.predict(mel, feat.empty() ? nullptr : &feat);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      out.push_back(GestureSequence::from_channels(model.generator.layout(), pred,
                                                   static_cast<int>(b), data.clips[s].gesture.fps));
    }
  }
  return out;
}

MetricsReport evaluate_predictions(const std::vector<GestureSequence>& pred,
                                   const std::vector<GestureSequence>& gt, GestureVae& vae) {
  if (pred.size() != gt.size() || gt.empty()) fail_usage("evaluation needs matching, non-empty sets");
  MetricsReport r;
  r.n_samples = static_cast<int>(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    r.l2 += l2_distance(pred[i], gt[i]);
    r.lip_error += lip_sync_error(pred[i], gt[i]);
  }
  r.l2 /= static_cast<double>(gt.size());
  r.lip_error /= static_cast<double>(gt.size());
  r.ftd = ftd(pred, gt, vae);
  return r;
}

MetricsReport evaluate(GestureModel& model, const Dataset& data, GestureVae& vae,
                       const EvalOptions& opt) {
  const auto gt = data.gestures();
  if (opt.oracle) return evaluate_predictions(gt, gt, vae);
  return evaluate_predictions(predict_dataset(model, data, opt.seed), gt, vae);
}

}  // namespace sdt
