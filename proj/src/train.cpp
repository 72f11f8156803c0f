#include "sdt/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "sdt/error.hpp"

namespace sdt {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- data

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  for (const auto& c : clips) out.push_back(c.clip_id);
  return out;
}

std::vector<GestureSequence> Dataset::gestures() const {
  std::vector<GestureSequence> out;
  for (const auto& c : clips) out.push_back(c.gesture);
  return out;
}

Dataset Dataset::subset(const std::string& split) const {
  Dataset d;
  d.layout = layout;
  for (const auto& c : clips) {
    if (c.split == split) d.clips.push_back(c);
  }
  return d;
}

Dataset load_dataset(const fs::path& manifest, const MelConfig& mel, const std::string& split) {
  mel.validate();
  Dataset d;
  for (const auto& e : read_manifest(manifest)) {
    if (!split.empty() && e.split != split) continue;
    TrainingClip c;
    c.clip_id = e.clip_id;
    c.split = e.split;
    c.gesture = read_gesture_file(e.gesture_path, d.layout ? d.layout->name : "");
    if (!d.layout) d.layout = c.gesture.layout;
    if (std::abs(c.gesture.fps - mel.fps) > 1e-9) {
      fail_data(e.gesture_path.string() + ": fps does not match the mel configuration");
    }
    const AudioClip audio = load_wav(e.audio_path);
    if (audio.sample_rate != mel.sample_rate) {
      fail_data(e.audio_path.string() + ": sample rate " + std::to_string(audio.sample_rate) +
                " does not match " + std::to_string(mel.sample_rate));
    }
    c.mel = mel_spectrogram(audio, mel, c.gesture.frames).values;
    d.clips.push_back(std::move(c));
  }
  if (d.clips.empty()) {
    fail_data(manifest.string() + ": no clips" + (split.empty() ? "" : " in split '" + split + "'"));
  }
  return d;
}

namespace {

template <class Get>
Tensor gather(const Dataset& d, std::span<const int> idx, Get get) {
  if (idx.empty()) fail_usage("empty batch");
  const Tensor& first = get(d.clips.at(static_cast<std::size_t>(idx[0])));
  std::vector<int> shape{static_cast<int>(idx.size())};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  Tensor out(shape);
  const std::size_t n = first.size();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Tensor& t = get(d.clips.at(static_cast<std::size_t>(idx[b])));
    if (!t.same_shape(first)) fail_data("batched clips must have the same frame count");
    std::copy(t.data(), t.data() + n, out.data() + b * n);
  }
  return out;
}

}  // namespace

Tensor gather_mel(const Dataset& d, std::span<const int> idx) {
  return gather(d, idx, [](const TrainingClip& c) -> const Tensor& { return c.mel; });
}

Tensor gather_gestures(const Dataset& d, std::span<const int> idx) {
  std::vector<Tensor> ch;
  for (int i : idx) ch.push_back(d.clips.at(static_cast<std::size_t>(i)).gesture.to_channels());
  if (ch.empty()) fail_usage("empty batch");
  std::vector<int> shape{static_cast<int>(ch.size())};
  shape.insert(shape.end(), ch[0].shape().begin(), ch[0].shape().end());
  Tensor out(shape);
  for (std::size_t b = 0; b < ch.size(); ++b) {
    if (!ch[b].same_shape(ch[0])) fail_data("batched clips must have the same frame count");
    std::copy(ch[b].data(), ch[b].data() + ch[b].size(), out.data() + b * ch[0].size());
  }
  return out;
}

// ---------------------------------------------------------------- losses

double regression_loss(const Tensor& pred, const Tensor& gt, Tensor* grad) {
  if (!pred.same_shape(gt) || pred.rank() != 3) {
    fail_usage("regression_loss: shape mismatch " + pred.shape_str() + " vs " + gt.shape_str());
  }
  const double scale = 1.0 / (static_cast<double>(pred.dim(0)) * pred.dim(2));
  if (grad) *grad = Tensor(pred.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gt[i];
    s += std::abs(d);
    if (grad) (*grad)[i] = d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
  }
  return s * scale;
}

LossParts total_loss(Generator& gen, const Tensor& mel, const Tensor& gt, double lambda_reg,
                     double lambda_kl, TemplateBank* bank, std::span<const int> idx,
                     const Tensor* fixed_templates, bool backward) {
  const int frames = gt.dim(2);
  Tensor feat;
  const Tensor* fp = nullptr;
  if (bank) {
    feat = bank->features(idx, frames);
    fp = &feat;
  } else if (fixed_templates) {
    feat = tile_templates(*fixed_templates, frames);
    fp = &feat;
  }
  const Tensor pred = gen.forward(mel, fp);
  Tensor g;
  LossParts parts;
  parts.reg = regression_loss(pred, gt, backward ? &g : nullptr);
  Tensor g_vec;
  if (bank) parts.kl = kl_regularizer(bank->vectors(idx), backward ? &g_vec : nullptr);
  parts.total = lambda_reg * parts.reg + lambda_kl * parts.kl;
  if (backward) {
    for (auto& v : g.storage()) v *= lambda_reg;
    const Tensor g_feat = gen.backward(g);
    if (bank && !bank->frozen()) {
      bank->accumulate_feature_grad(idx, g_feat);
      for (auto& v : g_vec.storage()) v *= lambda_kl;
      bank->accumulate_vector_grad(idx, g_vec);
    }
  }
  return parts;
}

// ---------------------------------------------------------------- optimizer

void Adam::step(const std::vector<Param*>& params, double lr) {
  step(params, std::vector<double>(params.size(), lr));
}

void Adam::step(const std::vector<Param*>& params, const std::vector<double>& lrs) {
  if (lrs.size() != params.size()) fail_usage("one learning rate per parameter expected");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t j = 0; j < params.size(); ++j) {
    Param* p = params[j];
    const double lr = lrs[j];
    auto it = moments_.find(p->name);
    if (it == moments_.end()) {
      it = moments_.emplace(p->name, std::make_pair(Tensor(p->value.shape()), Tensor(p->value.shape())))
               .first;
    }
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    if (!m.same_shape(p->value)) fail_usage("optimizer state shape mismatch for " + p->name);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      p->value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

void Adam::save(CheckpointData& ckpt) const {
  ckpt.meta["adam_step"] = t_;
  for (const auto& [name, mv] : moments_) {
    ckpt.add("adam.m." + name, mv.first);
    ckpt.add("adam.v." + name, mv.second);
  }
}

void Adam::load(const CheckpointData& ckpt) {
  moments_.clear();
  t_ = ckpt.meta.value("adam_step", 0LL);
  const std::string pm = "adam.m.";
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind(pm, 0) != 0) continue;
    const std::string p = name.substr(pm.size());
    moments_[p] = {t, ckpt.get("adam.v." + p)};
  }
}

double clip_grad_norm(const std::vector<Param*>& params, double max_norm) {
  double s = 0.0;
  for (const Param* p : params) s += sum_squares(p->grad);
  const double norm = std::sqrt(s);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (Param* p : params) {
      for (auto& g : p->grad.storage()) g *= k;
    }
  }
  return norm;
}

// ---------------------------------------------------------------- training

std::string EpochLog::to_json() const {
  return json{{"epoch", epoch}, {"L_reg", reg}, {"L_KL", kl}, {"lr", lr}}.dump();
}

namespace {

// Epoch order: seeded shuffle, incomplete final batch dropped. A dataset
// smaller than the batch size trains on one batch of everything.
std::vector<std::vector<int>> epoch_batches(Rng& rng, int n, int batch_size) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const int b = std::min(batch_size, n);
  std::vector<std::vector<int>> out;
  for (int s = 0; s + b <= n; s += b) out.emplace_back(order.begin() + s, order.begin() + s + b);
  return out;
}

class LogWriter {
 public:
  explicit LogWriter(const std::string& path) {
    if (path.empty()) return;
    out_.open(path, std::ios::trunc);
    if (!out_) fail_data("cannot open log file " + path);
  }
  void write(const EpochLog& e) {
    if (!out_.is_open()) return;
    out_ << e.to_json() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

std::string epoch_path(const std::string& out, int epoch) {
  return out + ".epoch" + std::to_string(epoch);
}

}  // namespace

namespace {

// Per-bin mean and standard deviation over every training column.
void set_mel_stats_from(Generator& gen, const Dataset& data) {
  const int m = data.clips.front().mel.dim(0);
  Tensor mean({m}), sd({m});
  double cols = 0.0;
  for (const auto& c : data.clips) {
    const int t = c.mel.dim(1);
    cols += t;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < t; ++j) mean[i] += c.mel[static_cast<std::size_t>(i) * t + j];
    }
  }
  for (int i = 0; i < m; ++i) mean[i] /= cols;
  for (const auto& c : data.clips) {
    const int t = c.mel.dim(1);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < t; ++j) {
        const double d = c.mel[static_cast<std::size_t>(i) * t + j] - mean[i];
        sd[i] += d * d;
      }
    }
  }
  // Floor keeps constant bins (e.g. all-silent data) usable.
  for (int i = 0; i < m; ++i) sd[i] = std::max(std::sqrt(sd[i] / cols), 1e-3);
  gen.set_mel_stats(mean, sd);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& data, GestureVae* vae) {
  cfg.validate();
  if (data.clips.empty()) fail_data("training set is empty");
  if (data.layout->name != cfg.generator.layout) {
    fail_data("dataset layout '" + data.layout->name + "' does not match generator layout '" +
              cfg.generator.layout + "'");
  }
  const int n = static_cast<int>(data.clips.size());
  const int frames = data.clips.front().gesture.frames;

  TrainResult res{GestureModel::create(cfg), {}, Adam{}};
  GestureModel& model = res.model;
  const GeneratorConfig gcfg = cfg.effective_generator();
  set_mel_stats_from(model.generator, data);

  Tensor vae_templates;  // (N, C) for vae_template
  switch (cfg.variant) {
    case Variant::plain:
      break;
    case Variant::bp_clip:
    case Variant::bp_frame:
      if (std::min(cfg.batch_size, n) < 2 && gcfg.template_mode == TemplateMode::clip) {
        fail_usage("bp_clip needs batches of at least 2 clips for the KL term");
      }
      model.bank = TemplateBank::init(data.ids(), gcfg.template_dim, gcfg.template_mode, frames);
      break;
    case Variant::vae_template: {
      if (!vae) fail_usage("vae_template training requires a VAE checkpoint");
      if (!vae->frozen()) fail_usage("vae_template training requires a frozen VAE");
      if (vae->config().template_dim != gcfg.template_dim) {
        fail_usage("VAE template_dim does not match generator template_dim");
      }
      if (vae->layout()->name != gcfg.layout) fail_usage("VAE layout does not match generator");
      const auto ts = vae->extract_templates(data.gestures());
      TemplateBank bank = TemplateBank::init(data.ids(), gcfg.template_dim, TemplateMode::clip);
      for (int i = 0; i < n; ++i) {
        std::copy(ts[i].begin(), ts[i].end(), bank.entry_mut(i).begin());
      }
      bank.freeze();
      model.bank = std::move(bank);
      break;
    }
  }

  std::vector<Param*> params = model.generator.parameters();
  std::vector<double> lr_scale(params.size(), 1.0);
  if (model.bank && !model.bank->frozen()) {
    params.push_back(&model.bank->table());
    lr_scale.push_back(cfg.template_lr_scale);
  }
  std::vector<double> lrs(params.size());

  Rng order_rng = Rng::derive(cfg.seed, 0x0bd3, 1);
  LogWriter log(cfg.log);
  std::optional<CheckpointData> last_good;
  if (!cfg.out.empty()) last_good = model.to_checkpoint(&res.optimizer, 0, &order_rng);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    model.generator.set_training(true);
    double sum_reg = 0.0, sum_kl = 0.0;
    int batches = 0;
    for (const auto& idx : epoch_batches(order_rng, n, cfg.batch_size)) {
      const Tensor mel = gather_mel(data, idx);
      const Tensor gt = gather_gestures(data, idx);
      for (Param* p : params) p->zero_grad();
      LossParts parts;
      if (cfg.variant == Variant::vae_template) {
        const int c = gcfg.template_dim;
        Tensor fixed({static_cast<int>(idx.size()), c});
        for (std::size_t b = 0; b < idx.size(); ++b) {
          const auto e = model.bank->entry(idx[b]);
          std::copy(e.begin(), e.end(), fixed.data() + b * c);
        }
        parts = total_loss(model.generator, mel, gt, cfg.lambda_reg, cfg.lambda_kl, nullptr, idx,
                           &fixed, true);
      } else {
        parts = total_loss(model.generator, mel, gt, cfg.lambda_reg, cfg.lambda_kl,
                           model.bank ? &*model.bank : nullptr, idx, nullptr, true);
      }
      if (!std::isfinite(parts.total)) {
        std::string msg = "non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                          std::to_string(batches + 1) + " (L_reg=" + std::to_string(parts.reg) +
                          ", L_KL=" + std::to_string(parts.kl) + ")";
        if (last_good) {
          save_checkpoint(*last_good, cfg.out);
          msg += "; last good checkpoint (epoch " +
                 std::to_string(last_good->meta.value("epoch", 0)) + ") written to " + cfg.out;
        }
        fail_numeric(msg);
      }
      clip_grad_norm(params, cfg.grad_clip);
      for (std::size_t j = 0; j < params.size(); ++j) lrs[j] = lr * lr_scale[j];
      res.optimizer.step(params, lrs);
      sum_reg += parts.reg;
      sum_kl += parts.kl;
      ++batches;
    }
    EpochLog e{epoch, batches ? sum_reg / batches : 0.0, batches ? sum_kl / batches : 0.0, lr};
    res.log.push_back(e);
    log.write(e);
    if (!cfg.out.empty()) {
      last_good = model.to_checkpoint(&res.optimizer, epoch, &order_rng);
      if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch < cfg.epochs) {
        save_checkpoint(*last_good, epoch_path(cfg.out, epoch));
      }
    }
  }
  model.generator.set_training(false);
  if (last_good) save_checkpoint(*last_good, cfg.out);
  return res;
}

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.manifest.empty()) fail_usage("config.manifest is required");
  std::optional<GestureVae> vae;
  if (cfg.variant == Variant::vae_template) {
    if (cfg.vae_checkpoint.empty()) fail_usage("config.vae_checkpoint is required for vae_template");
    vae = load_vae(cfg.vae_checkpoint);
  }
  const Dataset data = load_dataset(cfg.manifest, cfg.effective_mel(), "train");
  return train(cfg, data, vae ? &*vae : nullptr);
}

// ---------------------------------------------------------------- VAE

namespace {

// Non-overlapping windows of exactly `frames` frames.
std::vector<GestureSequence> vae_windows(const std::vector<GestureSequence>& data, int frames) {
  std::vector<GestureSequence> out;
  for (const auto& s : data) {
    for (int start = 0; start + frames <= s.frames; start += frames) {
      GestureSequence w(s.layout, frames, s.fps);
      const std::size_t stride = static_cast<std::size_t>(s.keypoints()) * 2;
      std::copy(s.coords.begin() + static_cast<std::ptrdiff_t>(start * stride),
                s.coords.begin() + static_cast<std::ptrdiff_t>((start + frames) * stride),
                w.coords.begin());
      out.push_back(std::move(w));
    }
  }
  return out;
}

}  // namespace

VaeTrainResult train_vae(const VaeTrainConfig& cfg, const std::vector<GestureSequence>& data) {
  cfg.vae.validate();
  const auto windows = vae_windows(data, cfg.vae.frames);
  if (windows.size() < 2) fail_data("VAE training needs at least 2 windows of the configured length");
  if (windows.front().layout->name != cfg.vae.layout) {
    fail_data("dataset layout does not match VAE layout '" + cfg.vae.layout + "'");
  }
  VaeTrainResult res{GestureVae(cfg.vae), {}};
  Rng init_rng = Rng::derive(cfg.seed, 0x0fae, 0);
  res.vae.init(init_rng);
  Rng order_rng = Rng::derive(cfg.seed, 0x0fae, 1);
  Rng noise_rng = Rng::derive(cfg.seed, 0x0fae, 2);
  Adam opt;
  auto params = res.vae.parameters();
  LogWriter log(cfg.log);
  const int n = static_cast<int>(windows.size());
  const int c = cfg.vae.template_dim;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double sum_rec = 0.0, sum_kl = 0.0;
    int batches = 0;
    for (const auto& idx : epoch_batches(order_rng, n, cfg.batch_size)) {
      std::vector<GestureSequence> batch;
      for (int i : idx) batch.push_back(windows[static_cast<std::size_t>(i)]);
      Tensor noise({static_cast<int>(idx.size()), c});
      for (auto& v : noise.storage()) v = noise_rng.normal();
      res.vae.zero_grad();
      const VaeLoss l = res.vae.loss(stack_sequences(batch), noise, true);
      if (!std::isfinite(l.total)) {
        fail_numeric("non-finite VAE loss at epoch " + std::to_string(epoch));
      }
      clip_grad_norm(params, 10.0);
      opt.step(params, cfg.lr);
      sum_rec += l.recon;
      sum_kl += l.kl;
      ++batches;
    }
    EpochLog e{epoch, batches ? sum_rec / batches : 0.0, batches ? sum_kl / batches : 0.0, cfg.lr};
    res.log.push_back(e);
    log.write(e);
  }
  res.vae.freeze();
  return res;
}

VaeTrainResult train_vae(const VaeTrainConfig& cfg) {
  if (cfg.manifest.empty()) fail_usage("config.manifest is required");
  std::vector<GestureSequence> data;
  for (const auto& e : read_manifest(cfg.manifest)) {
    if (e.split != "train") continue;
    data.push_back(read_gesture_file(e.gesture_path, cfg.vae.layout));
  }
  VaeTrainResult res = train_vae(cfg, data);
  if (!cfg.out.empty()) save_checkpoint(vae_to_checkpoint(res.vae), cfg.out);
  return res;
}

CheckpointData vae_to_checkpoint(GestureVae& vae) {
  CheckpointData ckpt;
  ckpt.meta = {{"kind", "vae"}, {"config", vae_config_json(vae.config())}, {"frozen", vae.frozen()}};
  for (Param* p : vae.parameters()) ckpt.add(p->name, p->value);
  return ckpt;
}

GestureVae vae_from_checkpoint(const CheckpointData& ckpt) {
  if (ckpt.meta.value("kind", "") != "vae") fail_data("checkpoint is not a VAE checkpoint");
  GestureVae vae(vae_config_parse(ckpt.meta.at("config")));
  Rng rng(0);
  vae.init(rng);
  for (Param* p : vae.parameters()) {
    const Tensor& t = ckpt.get(p->name);
    if (!t.same_shape(p->value)) fail_data("VAE checkpoint tensor '" + p->name + "' has wrong shape");
    p->value = t;
  }
  if (ckpt.meta.value("frozen", false)) vae.freeze();
  return vae;
}

GestureVae load_vae(const fs::path& path) {
  if (!fs::exists(path)) fail_data("VAE checkpoint not found: " + path.string());
  return vae_from_checkpoint(load_checkpoint(path));
}

}  // namespace sdt
