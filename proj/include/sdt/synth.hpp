#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sdt/audio.hpp"
#include "sdt/gesture.hpp"

namespace sdt {

// One-to-many toy data: the lip opening is an exact function of the audio
// envelope while the body pose depends on a hidden per-clip mode.
struct SynthConfig {
  int n_clips = 100;
  int n_modes = 4;  // M
  int frames = 64;
  double fps = 15.0;
  std::string layout = "toy_v1";
  double noise_std = 0.005;      // body keypoints
  double lip_noise_std = 0.0;    // lip centre keypoints
  std::uint64_t seed = 0;
  int sample_rate = 16000;
  int test_every = 5;  // every n-th clip goes to the held-out split

  void validate() const;
};

inline constexpr double kLipGain = 0.1;
inline constexpr double kMotionGain = 0.05;

struct SynthClip {
  ClipRecord record;
  AudioClip audio;
  int mode = 0;
  std::vector<double> envelope;  // per pose frame
  std::string split = "train";
};

// Deterministic per (cfg.seed, clip_index).
SynthClip synth_clip(const SynthConfig& cfg, int clip_index);
// Explicit audio seed / mode / noise seed, for controlled comparisons.
SynthClip synth_clip_with(const SynthConfig& cfg, const std::string& clip_id,
                          std::uint64_t audio_seed, int mode, std::uint64_t noise_seed);

// Static pose of a mode (one frame) and its motion basis, as F=1 sequences.
GestureSequence synth_base_pose(const SynthConfig& cfg, int mode);
GestureSequence synth_motion_basis(const SynthConfig& cfg, int mode);

struct SynthDataset {
  std::filesystem::path manifest;
  std::vector<ManifestEntry> entries;
  std::map<std::string, int> modes;
};

// Writes clips/<id>.wav, clips/<id>.json, manifest.jsonl and modes.json.
SynthDataset synth_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

// modes.json sidecar reader (evaluation only).
std::map<std::string, int> read_modes(const std::filesystem::path& path);

}  // namespace sdt
