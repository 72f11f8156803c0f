#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sdt/gesture.hpp"

namespace sdt {

struct IngestConfig {
  std::string layout = "upper_body_v1";
  double shoulder_width = 0.25;  // normalization target
  double margin = 0.25;          // out-of-box tolerance for frame filtering
  int min_frames = 64;           // shorter kept runs are dropped
  int test_every = 5;            // every n-th written clip is held out
  int sample_rate = 16000;
};

struct IngestReport {
  int files = 0;
  int clips_written = 0;
  int frames_in = 0;
  int frames_kept = 0;
  std::vector<std::string> skipped;  // "<file>: reason"
  std::filesystem::path manifest;
};

// Keypoint files are <id>.json in the gesture format, optionally with a
// per-frame "person_count" array (default 1). Audio is <id>.wav. Filtered
// frames split a clip into contiguous runs; each long enough run is
// normalized and written with its matching audio segment.
IngestReport ingest_dataset(const std::filesystem::path& keypoints_dir,
                            const std::filesystem::path& audio_dir,
                            const std::filesystem::path& out_dir, const IngestConfig& cfg);

}  // namespace sdt
