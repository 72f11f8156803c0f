#include "sdt/sdt.h"

#include <Eigen/Core>
#include <cstdlib>
#include <cstring>
#include <map>
#include <new>
#include <nlohmann/json.hpp>
#include <string>

#include "sdt/analysis.hpp"
#include "sdt/error.hpp"
#include "sdt/ingest.hpp"
#include "sdt/synth.hpp"
#include "sdt/train.hpp"

using nlohmann::json;

struct sdt_model {
  sdt::GestureModel model;
};

struct sdt_vae {
  sdt::GestureVae vae;
};

namespace {

thread_local std::string g_last_error;

template <class F>
sdt_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return SDT_OK;
  } catch (const sdt::Error& e) {
    g_last_error = e.what();
    return static_cast<sdt_status>(static_cast<int>(e.kind()));
  } catch (const json::exception& e) {
    g_last_error = std::string("json: ") + e.what();
    return SDT_ERR_DATA;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return SDT_ERR_DATA;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SDT_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal: ") + e.what();
    return SDT_ERR_INTERNAL;
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void set_out(char** out, const std::string& s) {
  if (out) *out = dup(s);
}

std::string need(const char* s, const char* what) {
  if (!s || !*s) sdt::fail_usage(std::string(what) + " is required");
  return s;
}

json load_config(const char* path, const char* const* overrides, size_t n) {
  const std::string p = need(path, "config path");
  json j = sdt::parse_config_text(sdt::read_text_file(p), p);
  for (size_t i = 0; i < n; ++i) {
    if (!overrides[i]) sdt::fail_usage("null override");
    sdt::apply_override(j, overrides[i]);
  }
  return j;
}

void write_pair(const std::string& prefix, const json& data, const std::string& svg) {
  sdt::write_text_file(prefix + ".json", data.dump(1) + "\n");
  sdt::write_text_file(prefix + ".svg", svg);
}

json points_json(const sdt::PcaResult& p, const std::vector<std::string>& labels,
                 const std::vector<std::string>& ids) {
  json pts = json::array();
  for (std::size_t i = 0; i < p.points.size(); ++i) {
    json e = {{"xy", p.points[i]}};
    if (i < labels.size()) e["label"] = labels[i];
    if (i < ids.size()) e["clip_id"] = ids[i];
    pts.push_back(e);
  }
  return {{"dims", p.dims}, {"explained_ratio", p.explained_ratio}, {"points", pts}};
}

json sequence_json(const sdt::GestureSequence& s) { return json::parse(sdt::gesture_to_json(s)); }

}  // namespace

extern "C" {

const char* sdt_version(void) { return "0.1.0"; }

const char* sdt_last_error(void) { return g_last_error.c_str(); }

void sdt_string_free(char* s) { std::free(s); }

void sdt_set_threads(int n) {
  if (n <= 0) {
    const char* env = std::getenv("SDT_THREADS");
    n = env ? std::atoi(env) : 0;
  }
  if (n > 0) Eigen::setNbThreads(n);
}

sdt_status sdt_data_synth(const char* out_dir, int clips, int modes, uint64_t seed, int frames,
                          char** summary) {
  return guarded([&] {
    sdt::SynthConfig cfg;
    cfg.n_clips = clips;
    cfg.n_modes = modes;
    cfg.seed = seed;
    if (frames > 0) cfg.frames = frames;
    const auto ds = sdt::synth_dataset(cfg, need(out_dir, "--out"));
    std::map<int, int> counts;
    int test = 0;
    for (const auto& [id, m] : ds.modes) ++counts[m];
    for (const auto& e : ds.entries) test += e.split == "test";
    json c = json::object();
    for (const auto& [m, n] : counts) c[std::to_string(m)] = n;
    set_out(summary, json{{"manifest", ds.manifest.string()},
                          {"clips", ds.entries.size()},
                          {"test_clips", test},
                          {"mode_counts", c}}
                         .dump());
  });
}

sdt_status sdt_data_ingest(const char* keypoints_dir, const char* audio_dir, const char* layout,
                           const char* out_dir, double shoulder_width, int min_frames,
                           char** summary) {
  return guarded([&] {
    sdt::IngestConfig cfg;
    cfg.layout = need(layout, "--layout");
    if (shoulder_width > 0.0) cfg.shoulder_width = shoulder_width;
    if (min_frames > 0) cfg.min_frames = min_frames;
    const auto rep = sdt::ingest_dataset(need(keypoints_dir, "--keypoints"),
                                         need(audio_dir, "--audio"), need(out_dir, "--out"), cfg);
    set_out(summary, json{{"manifest", rep.manifest.string()},
                          {"files", rep.files},
                          {"clips", rep.clips_written},
                          {"frames_in", rep.frames_in},
                          {"frames_kept", rep.frames_kept},
                          {"skipped", rep.skipped}}
                         .dump());
  });
}

sdt_status sdt_train(const char* config_path, const char* variant, const char* const* overrides,
                     size_t n_overrides, char** summary) {
  return guarded([&] {
    json j = load_config(config_path, overrides, n_overrides);
    if (variant && *variant) j["variant"] = variant;
    const sdt::TrainConfig cfg = sdt::TrainConfig::from_json(j);
    const auto res = sdt::train(cfg);
    json s = {{"variant", sdt::to_string(cfg.variant)}, {"epochs", res.log.size()}, {"out", cfg.out}};
    if (!res.log.empty()) {
      s["L_reg"] = res.log.back().reg;
      s["L_KL"] = res.log.back().kl;
    }
    set_out(summary, s.dump());
  });
}

sdt_status sdt_train_vae(const char* config_path, const char* const* overrides,
                         size_t n_overrides, char** summary) {
  return guarded([&] {
    const auto cfg = sdt::VaeTrainConfig::from_json(load_config(config_path, overrides, n_overrides));
    const auto res = sdt::train_vae(cfg);
    json s = {{"epochs", res.log.size()}, {"out", cfg.out}};
    if (!res.log.empty()) {
      s["recon"] = res.log.back().reg;
      s["kl"] = res.log.back().kl;
    }
    set_out(summary, s.dump());
  });
}

sdt_status sdt_model_load(const char* path, sdt_model** out) {
  return guarded([&] {
    if (!out) sdt::fail_usage("null output handle");
    *out = nullptr;
    const std::string p = need(path, "--ckpt");
    if (!std::filesystem::exists(p)) sdt::fail_data("checkpoint not found: " + p);
    auto m = new sdt_model{sdt::GestureModel::from_checkpoint(sdt::load_checkpoint(p))};
    *out = m;
  });
}

void sdt_model_free(sdt_model* m) { delete m; }

sdt_status sdt_model_info(const sdt_model* m, char** info) {
  return guarded([&] {
    if (!m) sdt::fail_usage("null model");
    json j = {{"variant", sdt::to_string(m->model.config.variant)},
              {"layout", m->model.generator.layout()->name},
              {"config", m->model.config.to_json()}};
    if (m->model.bank) {
      j["templates"] = {{"count", m->model.bank->size()},
                        {"dim", m->model.bank->dim()},
                        {"mode", sdt::to_string(m->model.bank->mode())}};
    }
    set_out(info, j.dump());
  });
}

sdt_status sdt_infer(sdt_model* m, const char* wav_path, const char* template_spec, int windowed,
                     const char* out_path, char** warning) {
  if (warning) *warning = nullptr;
  return guarded([&] {
    if (!m) sdt::fail_usage("null model");
    const auto spec = sdt::TemplateSpec::parse(need(template_spec, "--template"));
    const std::string out = need(out_path, "--out");
    const auto res = m->model.infer(sdt::load_wav(need(wav_path, "--audio")), spec, windowed != 0);
    sdt::write_gesture_file(res.gesture, out);
    if (!res.warning.empty()) set_out(warning, res.warning);
  });
}

sdt_status sdt_vae_load(const char* path, sdt_vae** out) {
  return guarded([&] {
    if (!out) sdt::fail_usage("null output handle");
    *out = nullptr;
    *out = new sdt_vae{sdt::load_vae(need(path, "--vae-ckpt"))};
  });
}

void sdt_vae_free(sdt_vae* v) { delete v; }

sdt_status sdt_evaluate(sdt_model* m, const char* manifest, const char* split, sdt_vae* vae,
                        uint64_t seed, int oracle, char** report) {
  return guarded([&] {
    if (!vae) sdt::fail_usage("a VAE is required for evaluation");
    if (!m && !oracle) sdt::fail_usage("a model checkpoint is required unless --oracle is set");
    if (!vae->vae.frozen()) sdt::fail_usage("evaluation needs a frozen VAE");
    const std::string sp = split && *split ? split : "test";
    sdt::MelConfig mel;
    if (m) mel = m->model.config.effective_mel();
    const sdt::Dataset data = sdt::load_dataset(need(manifest, "--manifest"), mel, sp);
    sdt::EvalOptions opt;
    opt.seed = seed;
    opt.oracle = oracle != 0;
    sdt::MetricsReport r;
    if (m) {
      r = sdt::evaluate(m->model, data, vae->vae, opt);
    } else {
      const auto gt = data.gestures();
      r = sdt::evaluate_predictions(gt, gt, vae->vae);
    }
    set_out(report, r.to_json());
  });
}

sdt_status sdt_viz_templates(sdt_model* m, sdt_vae* vae, const char* manifest, const char* split,
                             uint64_t seed, const char* out_prefix) {
  return guarded([&] {
    const std::string prefix = need(out_prefix, "--out");
    std::vector<sdt::TemplateVector> vecs;
    std::vector<std::string> labels, ids;
    if (vae) {
      const std::string sp = split && *split ? split : "test";
      sdt::MelConfig mel;
      if (m) mel = m->model.config.effective_mel();
      const sdt::Dataset data = sdt::load_dataset(need(manifest, "--manifest"), mel, sp);
      for (const auto& t : vae->vae.extract_templates(data.gestures())) {
        vecs.push_back(t);
        labels.push_back("ground_truth");
      }
      ids = data.ids();
      if (m) {
        for (const auto& t : vae->vae.extract_templates(sdt::predict_dataset(m->model, data, seed))) {
          vecs.push_back(t);
          labels.push_back(sdt::to_string(m->model.config.variant));
        }
        ids.insert(ids.end(), ids.begin(), ids.end());
      }
    } else {
      if (!m || !m->model.bank) sdt::fail_usage("need a VAE or a model with templates");
      const auto& bank = *m->model.bank;
      if (bank.mode() != sdt::TemplateMode::clip) sdt::fail_usage("template PCA needs clip templates");
      for (int i = 0; i < bank.size(); ++i) {
        const auto e = bank.entry(i);
        vecs.emplace_back(e.begin(), e.end());
        labels.push_back("template");
      }
      ids = bank.ids();
    }
    const auto pca = sdt::pca_project(vecs, 2);
    write_pair(prefix, points_json(pca, labels, ids), sdt::pca_svg(pca, labels));
  });
}

sdt_status sdt_viz_factor(sdt_vae* vae, double magnitude, const char* out_prefix) {
  return guarded([&] {
    if (!vae) sdt::fail_usage("a VAE is required");
    const std::string prefix = need(out_prefix, "--out");
    const auto d = sdt::top_semantic_direction(vae->vae);
    const auto [pos, neg] = sdt::decode_opposites(vae->vae, d.top, magnitude);
    json j = {{"direction", d.top},
              {"eigenvalues", d.eigenvalues},
              {"directions", d.directions},
              {"degenerate", d.degenerate},
              {"magnitude", magnitude},
              {"positive", sequence_json(pos)},
              {"negative", sequence_json(neg)},
              {"mean_abs_difference", sdt::mean_abs_difference(pos, neg)}};
    write_pair(prefix, j, sdt::skeleton_strip_svg({pos, neg}));
  });
}

sdt_status sdt_viz_interp(sdt_model* m, sdt_vae* vae, const char* manifest, const char* wav_path,
                          const char* from_clip, const char* to_clip, int steps,
                          const char* out_prefix) {
  return guarded([&] {
    const std::string prefix = need(out_prefix, "--out");
    const std::string a = need(from_clip, "--from"), b = need(to_clip, "--to");
    sdt::InterpolationSweep sweep;
    if (wav_path && *wav_path) {
      if (!m || !m->model.bank) sdt::fail_usage("generator interpolation needs a model with templates");
      const auto& bank = *m->model.bank;
      const auto t0 = bank.entry(a), t1 = bank.entry(b);
      const auto mel = sdt::mel_spectrogram(sdt::load_wav(wav_path), m->model.config.effective_mel());
      sweep = sdt::interpolation_sweep(m->model, mel.values, t0, t1, steps);
    } else {
      if (!vae) sdt::fail_usage("VAE interpolation needs --vae-ckpt");
      std::map<std::string, sdt::GestureSequence> seqs;
      for (const auto& e : sdt::read_manifest(need(manifest, "--manifest"))) {
        if (e.clip_id == a || e.clip_id == b) seqs[e.clip_id] = sdt::read_gesture_file(e.gesture_path);
      }
      if (!seqs.count(a) || !seqs.count(b)) sdt::fail_usage("clip id not found in manifest");
      const auto ts = vae->vae.extract_templates({seqs.at(a), seqs.at(b)});
      sweep = sdt::interpolation_sweep(vae->vae, ts[0], ts[1], steps);
    }
    json outs = json::array();
    for (const auto& s : sweep.outputs) outs.push_back(sequence_json(s));
    json j = {{"alphas", sweep.alphas}, {"adjacent_diff", sweep.adjacent_diff}, {"outputs", outs}};
    write_pair(prefix, j, sdt::skeleton_strip_svg(sweep.outputs));
  });
}

}  // extern "C"
