#include <doctest.h>

#include <cmath>
#include <numbers>

#include "sdt/audio.hpp"
#include "support.hpp"

using namespace sdt;
using testutil::error_kind;

namespace {

AudioClip tone(double hz, double seconds, double amp = 0.5, int sr = 16000) {
  AudioClip c;
  c.sample_rate = sr;
  c.samples.resize(static_cast<std::size_t>(seconds * sr));
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / sr);
  }
  return c;
}

// HTK mel scale written out independently of the library.
double htk_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double htk_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

TEST_CASE("silent wav loads as zeros") {
  testutil::TempDir dir("audio_zero");
  AudioClip c;
  c.samples.assign(16000, 0.0);
  write_wav(c, dir / "z.wav");
  const AudioClip r = load_wav(dir / "z.wav");
  CHECK(r.sample_rate == 16000);
  REQUIRE(r.samples.size() == 16000);
  CHECK(std::all_of(r.samples.begin(), r.samples.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("full-scale square wave reads near +-1") {
  // PCM16 written by hand: alternating +32767 / -32768 runs.
  AudioClip c;
  c.samples.resize(320);
  for (std::size_t i = 0; i < c.samples.size(); ++i) c.samples[i] = (i / 20) % 2 == 0 ? 1.0 : -1.0;
  const AudioClip r = parse_wav(encode_wav(c), "sq");
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    CHECK(std::abs(r.samples[i] - c.samples[i]) <= 1.0 / 32768.0);
  }
}

TEST_CASE("wav round trip is within one quantization step") {
  sdt::Rng rng(2);
  AudioClip c;
  c.samples.resize(1000);
  for (auto& v : c.samples) v = rng.uniform(-1.0, 1.0);
  const AudioClip r = parse_wav(encode_wav(c), "rt");
  REQUIRE(r.samples.size() == c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i) CHECK(std::abs(r.samples[i] - c.samples[i]) <= 1.0 / 32767.0);
}

TEST_CASE("wav rejections") {
  AudioClip c;
  c.samples.assign(100, 0.1);
  auto bytes = encode_wav(c);
  SUBCASE("stereo") {
    auto b = bytes;
    b[22] = 2;  // channel count field
    try {
      parse_wav(b, "stereo.wav");
      FAIL("stereo accepted");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::data);
      CHECK(std::string(e.what()).find("mono required") != std::string::npos);
    }
  }
  SUBCASE("8-bit") {
    auto b = bytes;
    b[34] = 8;  // bits per sample
    CHECK(error_kind([&] { parse_wav(b, "x"); }) == testutil::kData);
  }
  SUBCASE("truncated") {
    std::vector<unsigned char> b(bytes.begin(), bytes.begin() + 30);
    CHECK(error_kind([&] { parse_wav(b, "x"); }) == testutil::kData);
  }
  SUBCASE("not riff") {
    auto b = bytes;
    b[0] = 'X';
    CHECK(error_kind([&] { parse_wav(b, "x"); }) == testutil::kData);
  }
}

TEST_CASE("silence maps to log eps everywhere") {
  AudioClip c;
  c.samples.assign(16000, 0.0);
  MelConfig cfg;
  const auto m = mel_spectrogram(c, cfg);
  for (double v : m.values.storage()) CHECK(v == doctest::Approx(std::log(cfg.eps)).epsilon(1e-12));
}

TEST_CASE("alignment: 64 pose frames at r = 4 gives 256 columns") {
  MelConfig cfg;
  const AudioClip c = tone(440.0, 64.0 / 15.0 + 1e-4);  // 68268 samples
  const auto m = mel_spectrogram(c, cfg);
  CHECK(m.pose_frames == 64);
  CHECK(m.time_frames() == 256);
  CHECK(m.values.dim(0) == cfg.mel_bins);
  CHECK(m.time_frames() % m.pose_frames == 0);
}

TEST_CASE("doubling the audio doubles T") {
  MelConfig cfg;
  const auto a = mel_spectrogram(tone(300.0, 2.0), cfg);
  const auto b = mel_spectrogram(tone(300.0, 4.0), cfg);
  CHECK(b.time_frames() == 2 * a.time_frames());
}

TEST_CASE("band centres follow the HTK mel scale") {
  MelConfig cfg;
  const double lo = htk_mel(cfg.fmin), hi = htk_mel(cfg.sample_rate / 2.0);
  for (int m = 0; m < cfg.mel_bins; ++m) {
    const double expect = htk_hz(lo + (hi - lo) * (m + 1) / (cfg.mel_bins + 1));
    CHECK(mel_band_center(cfg, m) == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("tone at a band centre dominates bands two or more away") {
  MelConfig cfg;
  for (int band : {30, 40, 50}) {
    const double hz = htk_hz(htk_mel(0.0) + (htk_mel(8000.0) - htk_mel(0.0)) * (band + 1) / (cfg.mel_bins + 1));
    const auto m = mel_spectrogram(tone(hz, 1.0), cfg);
    for (int t = 0; t < m.time_frames(); ++t) {
      const double peak = m.values[static_cast<std::size_t>(band) * m.time_frames() + t];
      for (int b = 0; b < cfg.mel_bins; ++b) {
        if (std::abs(b - band) < 2) continue;
        CHECK(peak > m.values[static_cast<std::size_t>(b) * m.time_frames() + t]);
      }
    }
  }
}

TEST_CASE("scaling the waveform up raises every value or leaves the floor") {
  sdt::Rng rng(7);
  AudioClip c;
  c.samples.resize(8000);
  for (std::size_t i = 0; i < c.samples.size(); ++i) c.samples[i] = i > 4000 ? 0.0 : 0.2 * rng.normal();
  AudioClip louder = c;
  for (auto& v : louder.samples) v *= 3.0;
  MelConfig cfg;
  const auto a = mel_spectrogram(c, cfg), b = mel_spectrogram(louder, cfg);
  const double floor = std::log(cfg.eps);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const bool at_floor = std::abs(a.values[i] - floor) < 1e-9 && std::abs(b.values[i] - floor) < 1e-9;
    CHECK((at_floor || b.values[i] > a.values[i]));
  }
}

TEST_CASE("mel spectrogram is deterministic") {
  MelConfig cfg;
  sdt::Rng rng(8);
  AudioClip c;
  c.samples.resize(12000);
  for (auto& v : c.samples) v = 0.3 * rng.normal();
  const auto a = mel_spectrogram(c, cfg), b = mel_spectrogram(c, cfg);
  CHECK(a.values.storage() == b.values.storage());
}

TEST_CASE("mel spectrogram rejections") {
  MelConfig cfg;
  AudioClip c;
  c.samples.assign(100, 0.1);
  CHECK(error_kind([&] { mel_spectrogram(c, cfg); }) == testutil::kData);
  c.samples.assign(16000, 0.1);
  c.sample_rate = 8000;
  CHECK(error_kind([&] { mel_spectrogram(c, cfg); }) == testutil::kData);
  MelConfig bad;
  bad.fft_size = 128;
  CHECK(error_kind([&] { bad.validate(); }) == testutil::kUsage);
}

TEST_CASE("filterbank rows are non-negative triangles") {
  MelConfig cfg;
  const Tensor fb = mel_filterbank(cfg);
  CHECK(fb.dim(0) == cfg.mel_bins);
  CHECK(fb.dim(1) == cfg.fft_size / 2 + 1);
  for (int m = 0; m < fb.dim(0); ++m) {
    double mx = 0.0;
    for (int k = 0; k < fb.dim(1); ++k) {
      const double v = fb[static_cast<std::size_t>(m) * fb.dim(1) + k];
      CHECK(v >= 0.0);
      mx = std::max(mx, v);
    }
    CHECK(mx > 0.0);
  }
}
