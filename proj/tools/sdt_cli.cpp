// Command-line front end. Talks to the library through the C interface only.

#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "sdt/sdt.h"

namespace {

const char* kind_name(int code) {
  switch (code) {
    case SDT_ERR_USAGE: return "usage";
    case SDT_ERR_DATA: return "data";
    case SDT_ERR_NUMERIC: return "numeric";
    default: return "internal";
  }
}

std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '"': o += "\\\""; break;
      case '\\': o += "\\\\"; break;
      case '\n': o += "\\n"; break;
      case '\t': o += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          o += buf;
        } else {
          o += c;
        }
    }
  }
  return o;
}

// One JSON line on stderr; the exit code mirrors the status.
int report_error(int code, const std::string& msg) {
  std::fprintf(stderr, "{\"error\":\"%s\",\"code\":%d,\"message\":\"%s\"}\n", kind_name(code), code,
               escape(msg).c_str());
  return code;
}

int check(sdt_status s) {
  if (s == SDT_OK) return 0;
  return report_error(s, sdt_last_error());
}

// Prints and frees a returned JSON string.
int emit(sdt_status s, char* text) {
  if (s != SDT_OK) return check(s);
  if (text) std::printf("%s\n", text);
  sdt_string_free(text);
  return 0;
}

struct ModelHandle {
  sdt_model* m = nullptr;
  ~ModelHandle() { sdt_model_free(m); }
};

struct VaeHandle {
  sdt_vae* v = nullptr;
  ~VaeHandle() { sdt_vae_free(v); }
};

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
  sdt_set_threads(0);
  CLI::App app{"Audio-driven co-speech gesture synthesis with template vectors"};
  app.require_subcommand(1);
  app.set_version_flag("--version", sdt_version());

  // data
  auto* data = app.add_subcommand("data", "Dataset synthesis and ingestion");
  data->require_subcommand(1);
  auto* synth = data->add_subcommand("synth", "Write a synthetic one-to-many dataset");
  std::string synth_out;
  int synth_clips = 100, synth_modes = 4, synth_frames = 64;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--clips", synth_clips, "Number of clips")->capture_default_str();
  synth->add_option("--modes", synth_modes, "Number of hidden pose modes")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();
  synth->add_option("--frames", synth_frames, "Frames per clip")->capture_default_str();

  auto* ingest = data->add_subcommand("ingest", "Validate, filter and normalize keypoint files");
  std::string ing_kp, ing_audio, ing_layout, ing_out;
  double ing_width = 0.25;
  int ing_min = 64;
  ingest->add_option("--keypoints", ing_kp, "Directory of <id>.json keypoint files")->required();
  ingest->add_option("--audio", ing_audio, "Directory of <id>.wav files")->required();
  ingest->add_option("--layout", ing_layout, "Skeleton layout name")->required();
  ingest->add_option("--out", ing_out, "Output directory")->required();
  ingest->add_option("--shoulder-width", ing_width, "Normalized mean shoulder width")
      ->capture_default_str();
  ingest->add_option("--min-frames", ing_min, "Drop kept runs shorter than this")
      ->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train a generator variant");
  std::string tr_config, tr_variant;
  std::vector<std::string> tr_set;
  train->add_option("--config", tr_config, "JSON config file")->required();
  train->add_option("--variant", tr_variant, "plain | bp_clip | bp_frame | vae_template");
  train->add_option("--set", tr_set, "Override a config value: dotted.key=value")
      ->allow_extra_args(false);

  auto* train_vae = app.add_subcommand("train-vae", "Train the gesture VAE");
  std::string tv_config;
  std::vector<std::string> tv_set;
  train_vae->add_option("--config", tv_config, "JSON config file")->required();
  train_vae->add_option("--set", tv_set, "Override a config value: dotted.key=value")
      ->allow_extra_args(false);

  // infer
  auto* infer = app.add_subcommand("infer", "Generate gestures for an audio clip");
  std::string inf_ckpt, inf_audio, inf_template, inf_out;
  bool inf_windowed = false;
  infer->add_option("--ckpt", inf_ckpt, "Generator checkpoint")->required();
  infer->add_option("--audio", inf_audio, "Mono 16-bit WAV")->required();
  infer->add_option("--template", inf_template, "sample:SEED | id:CLIP | zero | file:PATH")
      ->required();
  infer->add_option("--out", inf_out, "Output gesture JSON")->required();
  infer->add_flag("--windowed", inf_windowed, "64-frame windows with 8-frame crossfade");

  // eval
  auto* eval = app.add_subcommand("eval", "Metrics over a manifest split");
  std::string ev_ckpt, ev_manifest, ev_vae, ev_out, ev_split = "test";
  std::uint64_t ev_seed = 0;
  bool ev_oracle = false;
  eval->add_option("--ckpt", ev_ckpt, "Generator checkpoint (optional with --oracle)");
  eval->add_option("--manifest", ev_manifest, "Dataset manifest")->required();
  eval->add_option("--vae-ckpt", ev_vae, "Frozen VAE checkpoint")->required();
  eval->add_option("--out", ev_out, "Report JSON path")->required();
  eval->add_option("--split", ev_split, "Manifest split")->capture_default_str();
  eval->add_option("--seed", ev_seed, "Template sampling seed")->capture_default_str();
  eval->add_flag("--oracle", ev_oracle, "Score the ground truth against itself");

  // viz
  auto* viz = app.add_subcommand("viz", "Template-space analysis outputs (JSON + SVG)");
  viz->require_subcommand(1);
  auto* vt = viz->add_subcommand("templates", "PCA of template vectors");
  std::string vt_ckpt, vt_vae, vt_manifest, vt_out, vt_split = "test";
  std::uint64_t vt_seed = 0;
  vt->add_option("--ckpt", vt_ckpt, "Generator checkpoint");
  vt->add_option("--vae-ckpt", vt_vae, "VAE checkpoint (encode ground truth / predictions)");
  vt->add_option("--manifest", vt_manifest, "Dataset manifest (with --vae-ckpt)");
  vt->add_option("--split", vt_split, "Manifest split")->capture_default_str();
  vt->add_option("--seed", vt_seed, "Template sampling seed")->capture_default_str();
  vt->add_option("--out", vt_out, "Output prefix")->required();

  auto* vf = viz->add_subcommand("factor", "Top semantic direction of the VAE decoder");
  std::string vf_vae, vf_out;
  double vf_mag = 3.0;
  vf->add_option("--vae-ckpt", vf_vae, "VAE checkpoint")->required();
  vf->add_option("--magnitude", vf_mag, "Step along the direction")->capture_default_str();
  vf->add_option("--out", vf_out, "Output prefix")->required();

  auto* vi = viz->add_subcommand("interp", "Interpolate between two clip templates");
  std::string vi_ckpt, vi_vae, vi_manifest, vi_audio, vi_from, vi_to, vi_out;
  int vi_steps = 5;
  vi->add_option("--ckpt", vi_ckpt, "Generator checkpoint (with --audio)");
  vi->add_option("--vae-ckpt", vi_vae, "VAE checkpoint (without --audio)");
  vi->add_option("--manifest", vi_manifest, "Dataset manifest (VAE mode)");
  vi->add_option("--audio", vi_audio, "Drive the generator with this WAV");
  vi->add_option("--from", vi_from, "Start clip id")->required();
  vi->add_option("--to", vi_to, "End clip id")->required();
  vi->add_option("--steps", vi_steps, "Number of outputs")->capture_default_str();
  vi->add_option("--out", vi_out, "Output prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(SDT_ERR_USAGE, e.what());
  }

  if (*synth) {
    char* s = nullptr;
    const sdt_status st =
        sdt_data_synth(synth_out.c_str(), synth_clips, synth_modes, synth_seed, synth_frames, &s);
    return emit(st, s);
  }
  if (*ingest) {
    char* s = nullptr;
    const sdt_status st = sdt_data_ingest(ing_kp.c_str(), ing_audio.c_str(), ing_layout.c_str(),
                                           ing_out.c_str(), ing_width, ing_min, &s);
    return emit(st, s);
  }
  if (*train) {
    const auto sets = c_strings(tr_set);
    char* s = nullptr;
    const sdt_status st = sdt_train(tr_config.c_str(), opt(tr_variant), sets.data(), sets.size(), &s);
    return emit(st, s);
  }
  if (*train_vae) {
    const auto sets = c_strings(tv_set);
    char* s = nullptr;
    const sdt_status st = sdt_train_vae(tv_config.c_str(), sets.data(), sets.size(), &s);
    return emit(st, s);
  }
  if (*infer) {
    ModelHandle m;
    if (int rc = check(sdt_model_load(inf_ckpt.c_str(), &m.m))) return rc;
    char* warning = nullptr;
    const sdt_status st = sdt_infer(m.m, inf_audio.c_str(), inf_template.c_str(),
                                    inf_windowed ? 1 : 0, inf_out.c_str(), &warning);
    if (warning) {
      std::fprintf(stderr, "{\"warning\":\"%s\"}\n", escape(warning).c_str());
      sdt_string_free(warning);
    }
    return check(st);
  }
  if (*eval) {
    ModelHandle m;
    VaeHandle v;
    if (!ev_ckpt.empty()) {
      if (int rc = check(sdt_model_load(ev_ckpt.c_str(), &m.m))) return rc;
    }
    if (int rc = check(sdt_vae_load(ev_vae.c_str(), &v.v))) return rc;
    char* report = nullptr;
    const sdt_status st = sdt_evaluate(m.m, ev_manifest.c_str(), ev_split.c_str(), v.v, ev_seed,
                                       ev_oracle ? 1 : 0, &report);
    if (st != SDT_OK) return check(st);
    std::FILE* f = std::fopen(ev_out.c_str(), "w");
    if (!f) {
      sdt_string_free(report);
      return report_error(SDT_ERR_DATA, "cannot write " + ev_out);
    }
    std::fprintf(f, "%s\n", report);
    std::fclose(f);
    std::printf("%s\n", report);
    sdt_string_free(report);
    return 0;
  }
  if (*vt) {
    ModelHandle m;
    VaeHandle v;
    if (!vt_ckpt.empty()) {
      if (int rc = check(sdt_model_load(vt_ckpt.c_str(), &m.m))) return rc;
    }
    if (!vt_vae.empty()) {
      if (int rc = check(sdt_vae_load(vt_vae.c_str(), &v.v))) return rc;
    }
    return check(sdt_viz_templates(m.m, v.v, opt(vt_manifest), vt_split.c_str(), vt_seed,
                                   vt_out.c_str()));
  }
  if (*vf) {
    VaeHandle v;
    if (int rc = check(sdt_vae_load(vf_vae.c_str(), &v.v))) return rc;
    return check(sdt_viz_factor(v.v, vf_mag, vf_out.c_str()));
  }
  if (*vi) {
    ModelHandle m;
    VaeHandle v;
    if (!vi_ckpt.empty()) {
      if (int rc = check(sdt_model_load(vi_ckpt.c_str(), &m.m))) return rc;
    }
    if (!vi_vae.empty()) {
      if (int rc = check(sdt_vae_load(vi_vae.c_str(), &v.v))) return rc;
    }
    return check(sdt_viz_interp(m.m, v.v, opt(vi_manifest), opt(vi_audio), vi_from.c_str(),
                                vi_to.c_str(), vi_steps, vi_out.c_str()));
  }
  return report_error(SDT_ERR_USAGE, "no command given");
}
