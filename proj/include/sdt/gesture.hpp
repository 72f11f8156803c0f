#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sdt/tensor.hpp"

namespace sdt {

enum class BodyGroup : int { face = 0, left_arm, right_arm, left_hand, right_hand, body };
inline constexpr int kNumGroups = 6;

std::string to_string(BodyGroup g);

// Named index map over the K keypoints of one skeleton convention.
struct SkeletonLayout {
  std::string name;
  int keypoints = 0;
  std::array<std::vector<int>, kNumGroups> groups;
  std::array<int, kNumGroups> root_of_group{};
  int lip_upper_center = -1;
  int lip_lower_center = -1;
  int shoulder_left = -1;
  int shoulder_right = -1;
  // Global root for the hierarchical representation and the scale centre
  // for skeleton normalization.
  int neck = -1;

  const std::vector<int>& group(BodyGroup g) const {
    return groups[static_cast<int>(g)];
  }
  int root(BodyGroup g) const { return root_of_group[static_cast<int>(g)]; }

  // Throws sdt::Error(usage) when any layout invariant is broken.
  void validate() const;
  // Group index of every keypoint.
  std::vector<int> group_index() const;
  // True for the neck and every group root.
  std::vector<bool> root_mask() const;
};

using LayoutPtr = std::shared_ptr<const SkeletonLayout>;

// Built-in layouts: "toy_v1" (K = 14) and "upper_body_v1" (K = 121).
LayoutPtr layout_by_name(const std::string& name);
std::vector<std::string> layout_names();

// F x K x 2 keypoint coordinates in normalized image units.
struct GestureSequence {
  LayoutPtr layout;
  double fps = 15.0;
  int frames = 0;
  std::vector<double> coords;  // index ((f * K) + k) * 2 + d

  GestureSequence() = default;
  GestureSequence(LayoutPtr l, int f, double rate = 15.0);

  int keypoints() const { return layout ? layout->keypoints : 0; }
  double& at(int f, int k, int d) {
    return coords[(static_cast<std::size_t>(f) * keypoints() + k) * 2 + d];
  }
  double at(int f, int k, int d) const {
    return coords[(static_cast<std::size_t>(f) * keypoints() + k) * 2 + d];
  }
  void validate() const;

  // (2K, F) channel view with channel 2k + d, and its inverse.
  Tensor to_channels() const;
  static GestureSequence from_channels(LayoutPtr l, const Tensor& ch,
                                       int batch_index = 0, double fps = 15.0);
};

// Uniform scaling about the sequence-mean neck so that the mean shoulder
// width equals target_width.
GestureSequence normalize_skeleton(const GestureSequence& seq, double target_width);
double mean_shoulder_width(const GestureSequence& seq);

// Hierarchical offsets: neck absolute, other roots relative to the neck,
// all remaining keypoints relative to their group root.
GestureSequence to_hierarchical(const GestureSequence& seq);
GestureSequence from_hierarchical(const GestureSequence& offsets);

// Channel-layout kernels over (2K, F) blocks, used inside the networks.
void hierarchical_encode(const SkeletonLayout& l, int frames,
                         std::span<const double> abs_ch, std::span<double> off_ch);
void hierarchical_decode(const SkeletonLayout& l, int frames,
                         std::span<const double> off_ch, std::span<double> abs_ch);
// Gradient of hierarchical_decode: maps dL/d(abs) to dL/d(offsets).
void hierarchical_decode_backward(const SkeletonLayout& l, int frames,
                                  std::span<const double> g_abs,
                                  std::span<double> g_off);

// Frame keep-mask: false where person_count != 1 or any keypoint leaves the
// normalized box [-margin, 1 + margin].
std::vector<bool> filter_frames(const GestureSequence& seq,
                                std::span<const int> person_count,
                                double margin = 0.25);

// Gesture JSON: {"version":1, "layout":name, "fps":15, "coords":[[[x,y]*K]*F]}
GestureSequence read_gesture_file(const std::filesystem::path& path,
                                  const std::string& expected_layout = "");
void write_gesture_file(const GestureSequence& seq, const std::filesystem::path& path);
std::string gesture_to_json(const GestureSequence& seq);
GestureSequence gesture_from_json(const std::string& text, const std::string& where,
                                  const std::string& expected_layout = "");

// One line of a dataset manifest (JSON lines). Paths are resolved against
// the manifest directory when read.
struct ManifestEntry {
  std::string clip_id;
  std::filesystem::path gesture_path;
  std::filesystem::path audio_path;
  std::string speaker_id;
  std::string split = "train";
};

struct ClipRecord {
  std::string clip_id;
  GestureSequence gesture;
  std::filesystem::path audio_path;
  std::string speaker_id;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries,
                    const std::filesystem::path& path);

// Atomic text write (temp file + rename).
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace sdt
