#pragma once

#include <filesystem>
#include <vector>

#include "sdt/tensor.hpp"

namespace sdt {

struct AudioClip {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;

  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// 16-bit PCM mono RIFF/WAVE only.
AudioClip load_wav(const std::filesystem::path& path);
AudioClip parse_wav(const std::vector<unsigned char>& bytes, const std::string& where);
void write_wav(const AudioClip& clip, const std::filesystem::path& path);
std::vector<unsigned char> encode_wav(const AudioClip& clip);

struct MelConfig {
  int sample_rate = 16000;
  int mel_bins = 64;
  int window = 400;  // samples (25 ms at 16 kHz)
  int fft_size = 512;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 selects sample_rate / 2
  double fps = 15.0;  // pose frame rate the spectrogram is aligned to
  int frames_per_pose_frame = 4;  // r
  double eps = 1e-10;

  // Fractional hop in samples: sample_rate / (fps * r).
  double hop() const { return sample_rate / (fps * frames_per_pose_frame); }
  void validate() const;
};

// Log-mel magnitudes, M x T with T = r * F.
struct MelSpectrogram {
  Tensor values;  // (mel_bins, T)
  int mel_bins = 0;
  int frames_per_pose_frame = 0;
  int pose_frames = 0;

  int time_frames() const { return values.dim(1); }
};

// Pose frames covered by a clip: floor(duration * fps).
int pose_frames_for(const AudioClip& clip, double fps);

// Spectrogram column j is centred at (j + 0.5) * hop samples, so that every
// pose frame owns exactly r columns. pose_frames <= 0 derives F from the
// clip length.
MelSpectrogram mel_spectrogram(const AudioClip& clip, const MelConfig& cfg,
                               int pose_frames = 0);

// Triangular HTK-style filterbank, (mel_bins, fft_size / 2 + 1).
Tensor mel_filterbank(const MelConfig& cfg);
double hz_to_mel(double hz);
double mel_to_hz(double mel);
// Centre frequency of band m.
double mel_band_center(const MelConfig& cfg, int band);

}  // namespace sdt
