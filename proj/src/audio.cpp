#include "sdt/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>
#include <numbers>

#include "sdt/error.hpp"
#include "sdt/gesture.hpp"

namespace sdt {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- WAV

namespace {

std::uint32_t rd32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t rd16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
void wr32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
void wr16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v));
  b.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace

AudioClip parse_wav(const std::vector<unsigned char>& bytes, const std::string& where) {
  auto bad = [&](const std::string& m) { fail_data(where + ": " + m); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    bad("not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  int channels = 0, bits = 0, rate = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t len = rd32(hdr + 4);
    pos += 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16 || pos + len > bytes.size()) bad("truncated fmt chunk");
      const std::uint16_t format = rd16(bytes.data() + pos);
      channels = rd16(bytes.data() + pos + 2);
      rate = static_cast<int>(rd32(bytes.data() + pos + 4));
      bits = rd16(bytes.data() + pos + 14);
      if (format != 1) bad("unsupported encoding (PCM required)");
      if (bits != 16) bad("unsupported encoding (16-bit PCM required)");
      if (channels != 1) bad("mono required (file has " + std::to_string(channels) + " channels)");
      if (rate <= 0) bad("invalid sample rate");
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) bad("data chunk before fmt chunk");
      if (pos + len > bytes.size()) bad("truncated data chunk");
      if (len % 2 != 0) bad("truncated sample in data chunk");
      AudioClip clip;
      clip.sample_rate = rate;
      clip.samples.resize(len / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(rd16(bytes.data() + pos + 2 * i));
        clip.samples[i] = v / 32768.0;
      }
      if (clip.samples.empty()) bad("no audio samples");
      return clip;
    }
    pos += len + (len & 1u);
  }
  fail_data(where + ": missing data chunk (truncated file?)");
}

AudioClip load_wav(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return parse_wav(bytes, path.string());
}

std::vector<unsigned char> encode_wav(const AudioClip& clip) {
  std::vector<unsigned char> b;
  const auto data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  wr32(b, 36 + data_len);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  wr32(b, 16);
  wr16(b, 1);
  wr16(b, 1);
  wr32(b, static_cast<std::uint32_t>(clip.sample_rate));
  wr32(b, static_cast<std::uint32_t>(clip.sample_rate * 2));
  wr16(b, 2);
  wr16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  wr32(b, data_len);
  for (double s : clip.samples) {
    const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    wr16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return b;
}

void write_wav(const AudioClip& clip, const fs::path& path) {
  const auto bytes = encode_wav(clip);
  write_text_file(path, std::string(bytes.begin(), bytes.end()));
}

// ---------------------------------------------------------------- mel

void MelConfig::validate() const {
  if (sample_rate <= 0 || mel_bins <= 0 || window <= 0 || fft_size < window ||
      fps <= 0.0 || frames_per_pose_frame <= 0 || !(eps > 0.0)) {
    fail_usage("invalid mel configuration");
  }
  const double top = fmax > 0.0 ? fmax : sample_rate / 2.0;
  if (fmin < 0.0 || fmin >= top || top > sample_rate / 2.0 + 1e-9) {
    fail_usage("invalid mel frequency range");
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

double mel_point(const MelConfig& cfg, int i) {
  const double top = cfg.fmax > 0.0 ? cfg.fmax : cfg.sample_rate / 2.0;
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(top);
  return mel_to_hz(lo + (hi - lo) * i / (cfg.mel_bins + 1));
}

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

double mel_band_center(const MelConfig& cfg, int band) { return mel_point(cfg, band + 1); }

Tensor mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const int bins = cfg.fft_size / 2 + 1;
  Tensor fb({cfg.mel_bins, bins});
  for (int m = 0; m < cfg.mel_bins; ++m) {
    const double left = mel_point(cfg, m), centre = mel_point(cfg, m + 1),
                 right = mel_point(cfg, m + 2);
    for (int b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * cfg.sample_rate / cfg.fft_size;
      const double up = (f - left) / (centre - left);
      const double down = (right - f) / (right - centre);
      fb[static_cast<std::size_t>(m) * bins + b] = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

int pose_frames_for(const AudioClip& clip, double fps) {
  return static_cast<int>(
      std::floor(static_cast<double>(clip.samples.size()) * fps / clip.sample_rate + 1e-9));
}

MelSpectrogram mel_spectrogram(const AudioClip& clip, const MelConfig& cfg, int pose_frames) {
  cfg.validate();
  if (clip.sample_rate != cfg.sample_rate) {
    fail_data("sample rate " + std::to_string(clip.sample_rate) + " != configured " +
              std::to_string(cfg.sample_rate));
  }
  if (clip.samples.size() < static_cast<std::size_t>(cfg.window)) {
    fail_data("audio clip shorter than one analysis window");
  }
  for (double s : clip.samples) {
    if (!std::isfinite(s)) fail_data("non-finite audio sample");
  }
  const int frames = pose_frames > 0 ? pose_frames : pose_frames_for(clip, cfg.fps);
  if (frames < 1) fail_data("audio clip shorter than one pose frame");
  const int r = cfg.frames_per_pose_frame;
  const int cols = r * frames;
  const int bins = cfg.fft_size / 2 + 1;
  const double hop = cfg.hop();
  const Tensor fb = mel_filterbank(cfg);

  std::vector<double> hann(static_cast<std::size_t>(cfg.window));
  for (int i = 0; i < cfg.window; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / cfg.window);
  }

  double* in = fftw_alloc_real(static_cast<std::size_t>(cfg.fft_size));
  fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(bins));
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(cfg.fft_size, in, out, FFTW_ESTIMATE);
  }

  MelSpectrogram mel;
  mel.mel_bins = cfg.mel_bins;
  mel.frames_per_pose_frame = r;
  mel.pose_frames = frames;
  mel.values = Tensor({cfg.mel_bins, cols});
  std::vector<double> power(static_cast<std::size_t>(bins));
  const auto n = static_cast<long long>(clip.samples.size());
  for (int j = 0; j < cols; ++j) {
    const long long start = std::llround((j + 0.5) * hop - cfg.window / 2.0);
    std::fill(in, in + cfg.fft_size, 0.0);
    for (int i = 0; i < cfg.window; ++i) {
      const long long s = start + i;
      if (s >= 0 && s < n) in[i] = clip.samples[static_cast<std::size_t>(s)] * hann[i];
    }
    fftw_execute(plan);
    for (int b = 0; b < bins; ++b) power[b] = out[b][0] * out[b][0] + out[b][1] * out[b][1];
    for (int m = 0; m < cfg.mel_bins; ++m) {
      const double* w = fb.data() + static_cast<std::size_t>(m) * bins;
      double e = 0.0;
      for (int b = 0; b < bins; ++b) e += w[b] * power[b];
      mel.values[static_cast<std::size_t>(m) * cols + j] = std::log(e + cfg.eps);
    }
  }
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return mel;
}

}  // namespace sdt
