#include "sdt/synth.hpp"

#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numbers>

#include "sdt/error.hpp"
#include "sdt/rng.hpp"

namespace sdt {

namespace fs = std::filesystem;
using nlohmann::json;

void SynthConfig::validate() const {
  if (n_modes < 2) fail_usage("synthetic data needs at least 2 modes");
  if (n_clips < n_modes) fail_usage("synthetic data needs n_clips >= n_modes");
  if (frames < 1 || !(fps > 0.0) || sample_rate <= 0) fail_usage("invalid synthetic clip geometry");
  if (noise_std < 0.0 || lip_noise_std < 0.0) fail_usage("noise must be non-negative");
  if (test_every < 2) fail_usage("test_every must be >= 2");
  if (layout_by_name(layout)->name != "toy_v1") {
    fail_usage("synthetic data supports the toy_v1 layout only");
  }
}

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kUpperArm = 0.15;
constexpr double kForearm = 0.15;
constexpr double kHand = 0.05;

struct Vec2 {
  double x, y;
};

Vec2 dir(double angle) { return {std::sin(angle), std::cos(angle)}; }  // 0 = straight down

double arm_angle(int mode, int n_modes) {
  return (25.0 + 125.0 * mode / (n_modes - 1)) * kPi / 180.0;
}

// Mode parameters: arm elevation of each side and a head offset.
struct ModeShape {
  double left, right, head;
};

ModeShape mode_shape(int mode, int n_modes) {
  const int other = (mode + n_modes / 2) % n_modes;
  return {arm_angle(mode, n_modes), arm_angle(other, n_modes), (mode % 2 == 0 ? 1.0 : -1.0) * 0.04};
}

void set(GestureSequence& s, int k, Vec2 p) {
  s.at(0, k, 0) = p.x;
  s.at(0, k, 1) = p.y;
}

}  // namespace

GestureSequence synth_base_pose(const SynthConfig& cfg, int mode) {
  const ModeShape m = mode_shape(mode, cfg.n_modes);
  GestureSequence s(layout_by_name(cfg.layout), 1, cfg.fps);
  const Vec2 neck{0.5, 0.35};
  set(s, 0, neck);
  set(s, 1, {0.5, 0.55});
  const double hx = 0.5 + m.head;
  set(s, 2, {hx, 0.22});
  set(s, 3, {hx, 0.27});  // lip centres sit on the mouth centre; the opening is added later
  set(s, 4, {hx, 0.27});
  set(s, 5, {hx, 0.31});
  // Left side is +x in image coordinates.
  const Vec2 ls{0.65, 0.37}, rs{0.35, 0.37};
  const Vec2 dl = dir(m.left), dr = dir(m.right);
  const Vec2 le{ls.x + kUpperArm * dl.x, ls.y + kUpperArm * dl.y};
  const Vec2 re{rs.x - kUpperArm * dr.x, rs.y + kUpperArm * dr.y};
  const Vec2 lw{le.x + kForearm * dl.x, le.y + kForearm * dl.y};
  const Vec2 rw{re.x - kForearm * dr.x, re.y + kForearm * dr.y};
  set(s, 6, ls);
  set(s, 7, le);
  set(s, 8, lw);
  set(s, 9, rs);
  set(s, 10, re);
  set(s, 11, rw);
  set(s, 12, {lw.x + kHand * dl.x, lw.y + kHand * dl.y});
  set(s, 13, {rw.x - kHand * dr.x, rw.y + kHand * dr.y});
  return s;
}

GestureSequence synth_motion_basis(const SynthConfig& cfg, int mode) {
  const ModeShape m = mode_shape(mode, cfg.n_modes);
  GestureSequence s(layout_by_name(cfg.layout), 1, cfg.fps);
  // Beat motion perpendicular to each arm, direction alternating with the
  // mode; a small head nod.
  const double sign = mode % 2 == 0 ? 1.0 : -1.0;
  const Vec2 dl = dir(m.left), dr = dir(m.right);
  const Vec2 pl{sign * dl.y, -sign * dl.x}, pr{-sign * dr.y, -sign * dr.x};
  for (int k : {2, 3, 4, 5}) set(s, k, {0.0, 0.3});
  set(s, 7, {0.5 * pl.x, 0.5 * pl.y});
  set(s, 8, pl);
  set(s, 12, pl);
  set(s, 10, {0.5 * pr.x, 0.5 * pr.y});
  set(s, 11, pr);
  set(s, 13, pr);
  return s;
}

SynthClip synth_clip_with(const SynthConfig& cfg, const std::string& clip_id,
                          std::uint64_t audio_seed, int mode, std::uint64_t noise_seed) {
  cfg.validate();
  if (mode < 0 || mode >= cfg.n_modes) fail_usage("synthetic mode out of range");
  SynthClip clip;
  clip.mode = mode;

  // Audio: Hann-shaped sinusoid bursts separated by silent gaps.
  Rng arng(audio_seed);
  const auto n = static_cast<std::size_t>(std::ceil(cfg.frames * cfg.sample_rate / cfg.fps));
  std::vector<double> env(n, 0.0);
  clip.audio.sample_rate = cfg.sample_rate;
  clip.audio.samples.assign(n, 0.0);
  double t = arng.uniform(0.0, 0.3);
  const double total = static_cast<double>(n) / cfg.sample_rate;
  while (t < total) {
    const double dur = arng.uniform(0.12, 0.35);
    const double amp = arng.uniform(0.3, 0.9);
    const double freq = arng.uniform(200.0, 800.0);
    const double phase = arng.uniform(0.0, 2.0 * kPi);
    const auto s0 = static_cast<std::size_t>(std::ceil(t * cfg.sample_rate));
    const auto s1 = std::min(n, static_cast<std::size_t>(std::floor((t + dur) * cfg.sample_rate)));
    for (std::size_t i = s0; i < s1; ++i) {
      const double tau = static_cast<double>(i) / cfg.sample_rate;
      const double w = std::sin(kPi * (tau - t) / dur);
      env[i] = amp * w * w;
      clip.audio.samples[i] = env[i] * std::sin(2.0 * kPi * freq * tau + phase);
    }
    t += dur + arng.uniform(0.05, 0.4);
  }

  // Per-pose-frame envelope: mean of the sample envelope over the frame.
  clip.envelope.assign(static_cast<std::size_t>(cfg.frames), 0.0);
  for (int f = 0; f < cfg.frames; ++f) {
    const auto a = static_cast<std::size_t>(std::llround(f * cfg.sample_rate / cfg.fps));
    const auto b = std::min(n, static_cast<std::size_t>(std::llround((f + 1) * cfg.sample_rate / cfg.fps)));
    double s = 0.0;
    for (std::size_t i = a; i < b; ++i) s += env[i];
    clip.envelope[f] = b > a ? s / static_cast<double>(b - a) : 0.0;
  }

  const GestureSequence base = synth_base_pose(cfg, mode);
  const GestureSequence basis = synth_motion_basis(cfg, mode);
  const LayoutPtr layout = base.layout;
  GestureSequence g(layout, cfg.frames, cfg.fps);
  Rng nrng(noise_seed);
  const int up = layout->lip_upper_center, lo = layout->lip_lower_center;
  for (int f = 0; f < cfg.frames; ++f) {
    const double e = clip.envelope[f];
    for (int k = 0; k < layout->keypoints; ++k) {
      const bool lip = k == up || k == lo;
      for (int d = 0; d < 2; ++d) {
        double v = base.at(0, k, d) + kMotionGain * e * basis.at(0, k, d);
        if (lip) {
          if (d == 1) v += (k == up ? -0.5 : 0.5) * kLipGain * e;
          if (cfg.lip_noise_std > 0.0) v += cfg.lip_noise_std * nrng.normal();
        } else if (cfg.noise_std > 0.0) {
          v += cfg.noise_std * nrng.normal();
        }
        g.at(f, k, d) = v;
      }
    }
  }
  clip.record.clip_id = clip_id;
  clip.record.gesture = std::move(g);
  clip.record.speaker_id = "synthetic";
  return clip;
}

SynthClip synth_clip(const SynthConfig& cfg, int clip_index) {
  cfg.validate();
  char id[32];
  std::snprintf(id, sizeof id, "synth_%05d", clip_index);
  const auto idx = static_cast<std::uint64_t>(clip_index);
  Rng mode_rng = Rng::derive(cfg.seed, idx, 1);
  const int mode = static_cast<int>(mode_rng.index(static_cast<std::size_t>(cfg.n_modes)));
  SynthClip c = synth_clip_with(cfg, id, Rng::derive(cfg.seed, idx, 2).next_u64(), mode,
                                Rng::derive(cfg.seed, idx, 3).next_u64());
  c.split = (clip_index % cfg.test_every == cfg.test_every - 1) ? "test" : "train";
  return c;
}

SynthDataset synth_dataset(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir / "clips");
  SynthDataset ds;
  ds.manifest = out_dir / "manifest.jsonl";
  json modes = json::object();
  for (int i = 0; i < cfg.n_clips; ++i) {
    SynthClip c = synth_clip(cfg, i);
    const fs::path wav = out_dir / "clips" / (c.record.clip_id + ".wav");
    const fs::path ges = out_dir / "clips" / (c.record.clip_id + ".json");
    write_wav(c.audio, wav);
    write_gesture_file(c.record.gesture, ges);
    ds.entries.push_back({c.record.clip_id, ges, wav, c.record.speaker_id, c.split});
    ds.modes[c.record.clip_id] = c.mode;
    modes[c.record.clip_id] = c.mode;
  }
  write_manifest(ds.entries, ds.manifest);
  write_text_file(out_dir / "modes.json", modes.dump(1) + "\n");
  return ds;
}

std::map<std::string, int> read_modes(const fs::path& path) {
  try {
    return json::parse(read_text_file(path)).get<std::map<std::string, int>>();
  } catch (const json::exception& e) {
    fail_data(path.string() + ": " + e.what());
  }
}

}  // namespace sdt
