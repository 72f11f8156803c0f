#include "sdt/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "sdt/audio.hpp"
#include "sdt/error.hpp"

namespace sdt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<int> person_counts(const fs::path& path, int frames) {
  const json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded() || !j.contains("person_count")) return std::vector<int>(frames, 1);
  std::vector<int> pc;
  try {
    pc = j.at("person_count").get<std::vector<int>>();
  } catch (const json::exception&) {
    fail_data(path.string() + ": person_count must be an integer array");
  }
  if (static_cast<int>(pc.size()) != frames) {
    fail_data(path.string() + ": person_count has " + std::to_string(pc.size()) +
              " entries for " + std::to_string(frames) + " frames");
  }
  return pc;
}

GestureSequence slice(const GestureSequence& s, int a, int b) {
  GestureSequence out(s.layout, b - a, s.fps);
  const std::size_t stride = static_cast<std::size_t>(s.keypoints()) * 2;
  std::copy(s.coords.begin() + static_cast<std::ptrdiff_t>(a * stride),
            s.coords.begin() + static_cast<std::ptrdiff_t>(b * stride), out.coords.begin());
  return out;
}

}  // namespace

IngestReport ingest_dataset(const fs::path& keypoints_dir, const fs::path& audio_dir,
                            const fs::path& out_dir, const IngestConfig& cfg) {
  layout_by_name(cfg.layout);
  if (!(cfg.shoulder_width > 0.0)) fail_usage("shoulder width must be > 0");
  if (cfg.min_frames < 1 || cfg.test_every < 2) fail_usage("invalid ingest settings");
  if (!fs::is_directory(keypoints_dir)) fail_data("not a directory: " + keypoints_dir.string());
  if (!fs::is_directory(audio_dir)) fail_data("not a directory: " + audio_dir.string());

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(keypoints_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  IngestReport rep;
  std::vector<ManifestEntry> entries;
  fs::create_directories(out_dir / "clips");
  for (const auto& kp : files) {
    ++rep.files;
    const std::string id = kp.stem().string();
    const fs::path wav = audio_dir / (id + ".wav");
    if (!fs::exists(wav)) {
      rep.skipped.push_back(kp.filename().string() + ": no matching audio");
      continue;
    }
    const GestureSequence seq = read_gesture_file(kp, cfg.layout);
    const AudioClip audio = load_wav(wav);
    if (audio.sample_rate != cfg.sample_rate) {
      fail_data(wav.string() + ": sample rate must be " + std::to_string(cfg.sample_rate));
    }
    rep.frames_in += seq.frames;
    const auto mask = filter_frames(seq, person_counts(kp, seq.frames), cfg.margin);
    int run = 0;
    for (int f = 0; f < seq.frames;) {
      if (!mask[static_cast<std::size_t>(f)]) {
        ++f;
        continue;
      }
      int end = f;
      while (end < seq.frames && mask[static_cast<std::size_t>(end)]) ++end;
      // Audio must cover the whole run.
      const auto s0 = static_cast<std::size_t>(std::llround(f * audio.sample_rate / seq.fps));
      const auto s1 = static_cast<std::size_t>(std::llround(end * audio.sample_rate / seq.fps));
      if (end - f >= cfg.min_frames && s1 <= audio.samples.size()) {
        GestureSequence part = normalize_skeleton(slice(seq, f, end), cfg.shoulder_width);
        AudioClip a;
        a.sample_rate = audio.sample_rate;
        a.samples.assign(audio.samples.begin() + static_cast<std::ptrdiff_t>(s0),
                         audio.samples.begin() + static_cast<std::ptrdiff_t>(s1));
        const std::string cid = id + "_" + std::to_string(run++);
        const fs::path g = out_dir / "clips" / (cid + ".json");
        const fs::path w = out_dir / "clips" / (cid + ".wav");
        write_gesture_file(part, g);
        write_wav(a, w);
        const int n = static_cast<int>(entries.size());
        entries.push_back({cid, g, w, id, n % cfg.test_every == cfg.test_every - 1 ? "test" : "train"});
        rep.frames_kept += end - f;
      }
      f = end;
    }
    if (run == 0) rep.skipped.push_back(kp.filename().string() + ": no usable frame run");
  }
  if (entries.empty()) fail_data("ingest produced no clips");
  rep.clips_written = static_cast<int>(entries.size());
  rep.manifest = out_dir / "manifest.jsonl";
  write_manifest(entries, rep.manifest);
  return rep;
}

}  // namespace sdt
