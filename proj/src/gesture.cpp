#include "sdt/gesture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "sdt/error.hpp"

namespace sdt {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(BodyGroup g) {
  switch (g) {
    case BodyGroup::face: return "face";
    case BodyGroup::left_arm: return "left_arm";
    case BodyGroup::right_arm: return "right_arm";
    case BodyGroup::left_hand: return "left_hand";
    case BodyGroup::right_hand: return "right_hand";
    case BodyGroup::body: return "body";
  }
  return "?";
}

// ---------------------------------------------------------------- layouts

void SkeletonLayout::validate() const {
  auto bad = [&](const std::string& m) { fail_usage("layout " + name + ": " + m); };
  if (keypoints <= 0) bad("keypoint count must be positive");
  auto valid = [&](int k) { return k >= 0 && k < keypoints; };
  std::vector<int> owner(static_cast<std::size_t>(keypoints), -1);
  for (int g = 0; g < kNumGroups; ++g) {
    for (int k : groups[g]) {
      if (!valid(k)) bad("index " + std::to_string(k) + " out of range");
      if (owner[k] != -1) bad("keypoint " + std::to_string(k) + " in two groups");
      owner[k] = g;
    }
    if (!valid(root_of_group[g])) {
      bad("root of group " + to_string(static_cast<BodyGroup>(g)) + " invalid");
    }
  }
  if (std::find(owner.begin(), owner.end(), -1) != owner.end()) {
    bad("groups do not cover every keypoint");
  }
  const auto& face = group(BodyGroup::face);
  auto in_face = [&](int k) { return std::find(face.begin(), face.end(), k) != face.end(); };
  if (lip_upper_center == lip_lower_center || !in_face(lip_upper_center) ||
      !in_face(lip_lower_center)) {
    bad("lip centers must be distinct face keypoints");
  }
  if (!valid(shoulder_left) || !valid(shoulder_right) || !valid(neck)) {
    bad("shoulder/neck index invalid");
  }
}

std::vector<int> SkeletonLayout::group_index() const {
  std::vector<int> idx(static_cast<std::size_t>(keypoints), -1);
  for (int g = 0; g < kNumGroups; ++g) {
    for (int k : groups[g]) idx[k] = g;
  }
  return idx;
}

std::vector<bool> SkeletonLayout::root_mask() const {
  std::vector<bool> m(static_cast<std::size_t>(keypoints), false);
  for (int r : root_of_group) m[r] = true;
  m[neck] = true;
  return m;
}

namespace {

std::vector<int> range(int lo, int hi) {
  std::vector<int> v(static_cast<std::size_t>(hi - lo));
  std::iota(v.begin(), v.end(), lo);
  return v;
}

LayoutPtr make_toy_layout() {
  auto l = std::make_shared<SkeletonLayout>();
  l->name = "toy_v1";
  l->keypoints = 14;
  // 0 neck, 1 chest | 2 face centre, 3 upper lip, 4 lower lip, 5 chin |
  // 6-8 left shoulder/elbow/wrist | 9-11 right shoulder/elbow/wrist |
  // 12 left hand tip | 13 right hand tip
  l->groups[static_cast<int>(BodyGroup::body)] = {0, 1};
  l->groups[static_cast<int>(BodyGroup::face)] = {2, 3, 4, 5};
  l->groups[static_cast<int>(BodyGroup::left_arm)] = {6, 7, 8};
  l->groups[static_cast<int>(BodyGroup::right_arm)] = {9, 10, 11};
  l->groups[static_cast<int>(BodyGroup::left_hand)] = {12};
  l->groups[static_cast<int>(BodyGroup::right_hand)] = {13};
  l->root_of_group[static_cast<int>(BodyGroup::body)] = 0;
  l->root_of_group[static_cast<int>(BodyGroup::face)] = 2;
  l->root_of_group[static_cast<int>(BodyGroup::left_arm)] = 6;
  l->root_of_group[static_cast<int>(BodyGroup::right_arm)] = 9;
  l->root_of_group[static_cast<int>(BodyGroup::left_hand)] = 8;
  l->root_of_group[static_cast<int>(BodyGroup::right_hand)] = 11;
  l->lip_upper_center = 3;
  l->lip_lower_center = 4;
  l->shoulder_left = 6;
  l->shoulder_right = 9;
  l->neck = 0;
  l->validate();
  return l;
}

LayoutPtr make_upper_body_layout() {
  // OpenPose ordering: 9 body joints (nose, neck, R shoulder/elbow/wrist,
  // L shoulder/elbow/wrist, mid hip), 21 left-hand, 21 right-hand and 70
  // face points.
  auto l = std::make_shared<SkeletonLayout>();
  l->name = "upper_body_v1";
  l->keypoints = 121;
  constexpr int lhand = 9, rhand = 30, face = 51;
  l->groups[static_cast<int>(BodyGroup::body)] = {0, 1, 8};
  l->groups[static_cast<int>(BodyGroup::right_arm)] = {2, 3, 4};
  l->groups[static_cast<int>(BodyGroup::left_arm)] = {5, 6, 7};
  l->groups[static_cast<int>(BodyGroup::left_hand)] = range(lhand, lhand + 21);
  l->groups[static_cast<int>(BodyGroup::right_hand)] = range(rhand, rhand + 21);
  l->groups[static_cast<int>(BodyGroup::face)] = range(face, face + 70);
  l->root_of_group[static_cast<int>(BodyGroup::body)] = 1;
  l->root_of_group[static_cast<int>(BodyGroup::right_arm)] = 2;
  l->root_of_group[static_cast<int>(BodyGroup::left_arm)] = 5;
  l->root_of_group[static_cast<int>(BodyGroup::left_hand)] = lhand;
  l->root_of_group[static_cast<int>(BodyGroup::right_hand)] = rhand;
  l->root_of_group[static_cast<int>(BodyGroup::face)] = face + 30;  // nose tip
  l->lip_upper_center = face + 62;  // inner upper lip centre
  l->lip_lower_center = face + 66;  // inner lower lip centre
  l->shoulder_left = 5;
  l->shoulder_right = 2;
  l->neck = 1;
  l->validate();
  return l;
}

}  // namespace

LayoutPtr layout_by_name(const std::string& name) {
  static const LayoutPtr toy = make_toy_layout();
  static const LayoutPtr upper = make_upper_body_layout();
  if (name == "toy_v1") return toy;
  if (name == "upper_body_v1") return upper;
  fail_usage("unknown skeleton layout '" + name + "'");
}

std::vector<std::string> layout_names() { return {"toy_v1", "upper_body_v1"}; }

// ---------------------------------------------------------------- sequences

GestureSequence::GestureSequence(LayoutPtr l, int f, double rate)
    : layout(std::move(l)), fps(rate), frames(f),
      coords(static_cast<std::size_t>(f) * (layout ? layout->keypoints : 0) * 2, 0.0) {}

void GestureSequence::validate() const {
  if (!layout) fail_data("gesture sequence has no layout");
  if (frames < 1) fail_data("gesture sequence has no frames");
  if (!(fps > 0.0)) fail_data("gesture sequence fps must be positive");
  if (coords.size() != static_cast<std::size_t>(frames) * keypoints() * 2) {
    fail_data("gesture sequence coordinate count mismatch");
  }
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!std::isfinite(coords[i])) {
      const std::size_t f = i / (keypoints() * 2), k = (i / 2) % keypoints();
      fail_data("non-finite coordinate at frame " + std::to_string(f) +
                ", keypoint " + std::to_string(k));
    }
  }
}

Tensor GestureSequence::to_channels() const {
  const int k2 = 2 * keypoints();
  Tensor t({k2, frames});
  for (int f = 0; f < frames; ++f) {
    for (int c = 0; c < k2; ++c) {
      t[static_cast<std::size_t>(c) * frames + f] = coords[static_cast<std::size_t>(f) * k2 + c];
    }
  }
  return t;
}

GestureSequence GestureSequence::from_channels(LayoutPtr l, const Tensor& ch,
                                               int batch_index, double fps) {
  const int k2 = 2 * l->keypoints;
  const int frames = ch.dim(ch.rank() - 1);
  const int channels = ch.dim(ch.rank() - 2);
  if (channels != k2) {
    fail_usage("from_channels: expected " + std::to_string(k2) + " channels, got " +
               std::to_string(channels));
  }
  GestureSequence s(std::move(l), frames, fps);
  const double* src = ch.data() + static_cast<std::size_t>(batch_index) * k2 * frames;
  for (int f = 0; f < frames; ++f) {
    for (int c = 0; c < k2; ++c) {
      s.coords[static_cast<std::size_t>(f) * k2 + c] = src[static_cast<std::size_t>(c) * frames + f];
    }
  }
  return s;
}

double mean_shoulder_width(const GestureSequence& seq) {
  const SkeletonLayout& l = *seq.layout;
  double total = 0.0;
  for (int f = 0; f < seq.frames; ++f) {
    const double dx = seq.at(f, l.shoulder_left, 0) - seq.at(f, l.shoulder_right, 0);
    const double dy = seq.at(f, l.shoulder_left, 1) - seq.at(f, l.shoulder_right, 1);
    total += std::hypot(dx, dy);
  }
  return total / seq.frames;
}

GestureSequence normalize_skeleton(const GestureSequence& seq, double target_width) {
  seq.validate();
  if (!(target_width > 0.0)) fail_usage("target shoulder width must be positive");
  const double width = mean_shoulder_width(seq);
  if (!(width > 0.0)) {
    fail_data("degenerate skeleton: mean shoulder width is zero");
  }
  const int neck = seq.layout->neck;
  double cx = 0.0, cy = 0.0;
  for (int f = 0; f < seq.frames; ++f) {
    cx += seq.at(f, neck, 0);
    cy += seq.at(f, neck, 1);
  }
  cx /= seq.frames;
  cy /= seq.frames;
  const double s = target_width / width;
  GestureSequence out = seq;
  for (std::size_t i = 0; i < out.coords.size(); i += 2) {
    out.coords[i] = cx + s * (seq.coords[i] - cx);
    out.coords[i + 1] = cy + s * (seq.coords[i + 1] - cy);
  }
  return out;
}

// ---------------------------------------------------------------- hierarchy

namespace {

// Parent of each keypoint in the offset tree: -1 for the neck, the neck for
// other roots, the group root otherwise.
std::vector<int> parents(const SkeletonLayout& l) {
  const auto gi = l.group_index();
  const auto roots = l.root_mask();
  std::vector<int> p(static_cast<std::size_t>(l.keypoints));
  for (int k = 0; k < l.keypoints; ++k) {
    if (k == l.neck) p[k] = -1;
    else if (roots[k]) p[k] = l.neck;
    else p[k] = l.root_of_group[gi[k]];
  }
  return p;
}

}  // namespace

void hierarchical_encode(const SkeletonLayout& l, int frames,
                         std::span<const double> abs_ch, std::span<double> off_ch) {
  const auto par = parents(l);
  for (int k = 0; k < l.keypoints; ++k) {
    for (int d = 0; d < 2; ++d) {
      const std::size_t row = static_cast<std::size_t>(2 * k + d) * frames;
      const int p = par[k];
      for (int f = 0; f < frames; ++f) {
        const double base = p < 0 ? 0.0 : abs_ch[static_cast<std::size_t>(2 * p + d) * frames + f];
        off_ch[row + f] = abs_ch[row + f] - base;
      }
    }
  }
}

void hierarchical_decode(const SkeletonLayout& l, int frames,
                         std::span<const double> off_ch, std::span<double> abs_ch) {
  const auto par = parents(l);
  const auto roots = l.root_mask();
  // Neck first, then the other roots, then leaves.
  auto emit = [&](int k) {
    for (int d = 0; d < 2; ++d) {
      const std::size_t row = static_cast<std::size_t>(2 * k + d) * frames;
      const int p = par[k];
      for (int f = 0; f < frames; ++f) {
        const double base = p < 0 ? 0.0 : abs_ch[static_cast<std::size_t>(2 * p + d) * frames + f];
        abs_ch[row + f] = off_ch[row + f] + base;
      }
    }
  };
  emit(l.neck);
  for (int k = 0; k < l.keypoints; ++k) {
    if (roots[k] && k != l.neck) emit(k);
  }
  for (int k = 0; k < l.keypoints; ++k) {
    if (!roots[k]) emit(k);
  }
}

void hierarchical_decode_backward(const SkeletonLayout& l, int frames,
                                  std::span<const double> g_abs,
                                  std::span<double> g_off) {
  const auto par = parents(l);
  const auto roots = l.root_mask();
  std::copy(g_abs.begin(), g_abs.end(), g_off.begin());
  auto push = [&](int k) {
    for (int d = 0; d < 2; ++d) {
      const std::size_t row = static_cast<std::size_t>(2 * k + d) * frames;
      const std::size_t prow = static_cast<std::size_t>(2 * par[k] + d) * frames;
      for (int f = 0; f < frames; ++f) g_off[prow + f] += g_off[row + f];
    }
  };
  for (int k = 0; k < l.keypoints; ++k) {
    if (!roots[k]) push(k);
  }
  for (int k = 0; k < l.keypoints; ++k) {
    if (roots[k] && k != l.neck) push(k);
  }
}

GestureSequence to_hierarchical(const GestureSequence& seq) {
  Tensor ch = seq.to_channels();
  Tensor off(ch.shape());
  hierarchical_encode(*seq.layout, seq.frames, ch.values(), off.values());
  return GestureSequence::from_channels(seq.layout, off, 0, seq.fps);
}

GestureSequence from_hierarchical(const GestureSequence& offsets) {
  Tensor off = offsets.to_channels();
  Tensor ch(off.shape());
  hierarchical_decode(*offsets.layout, offsets.frames, off.values(), ch.values());
  return GestureSequence::from_channels(offsets.layout, ch, 0, offsets.fps);
}

// ---------------------------------------------------------------- filtering

std::vector<bool> filter_frames(const GestureSequence& seq,
                                std::span<const int> person_count, double margin) {
  if (person_count.size() != static_cast<std::size_t>(seq.frames)) {
    fail_usage("filter_frames: person_count length " + std::to_string(person_count.size()) +
               " != frame count " + std::to_string(seq.frames));
  }
  std::vector<bool> keep(static_cast<std::size_t>(seq.frames), true);
  const double lo = -margin, hi = 1.0 + margin;
  for (int f = 0; f < seq.frames; ++f) {
    if (person_count[f] != 1) {
      keep[f] = false;
      continue;
    }
    for (int k = 0; k < seq.keypoints(); ++k) {
      const double x = seq.at(f, k, 0), y = seq.at(f, k, 1);
      if (!(x >= lo && x <= hi && y >= lo && y <= hi)) {
        keep[f] = false;
        break;
      }
    }
  }
  return keep;
}

// ---------------------------------------------------------------- file I/O

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail_data("cannot write " + path.string());
    out << text;
    if (!out) fail_data("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

std::string gesture_to_json(const GestureSequence& seq) {
  json frames = json::array();
  for (int f = 0; f < seq.frames; ++f) {
    json pts = json::array();
    for (int k = 0; k < seq.keypoints(); ++k) {
      pts.push_back({seq.at(f, k, 0), seq.at(f, k, 1)});
    }
    frames.push_back(std::move(pts));
  }
  json j = {{"version", 1}, {"layout", seq.layout->name}, {"fps", seq.fps},
            {"coords", std::move(frames)}};
  return j.dump() + "\n";
}

GestureSequence gesture_from_json(const std::string& text, const std::string& where,
                                  const std::string& expected_layout) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail_data(where + ": malformed JSON: " + e.what());
  }
  auto bad = [&](const std::string& m) { fail_data(where + ": " + m); };
  if (!j.is_object()) bad("top level must be an object");
  if (!j.contains("version") || j["version"] != 1) bad("unsupported or missing version");
  if (!j.contains("layout") || !j["layout"].is_string()) bad("missing layout");
  const std::string lname = j["layout"].get<std::string>();
  if (!expected_layout.empty() && lname != expected_layout) {
    bad("layout mismatch: file has '" + lname + "', expected '" + expected_layout + "'");
  }
  LayoutPtr layout;
  try {
    layout = layout_by_name(lname);
  } catch (const Error&) {
    bad("unknown layout '" + lname + "'");
  }
  if (!j.contains("fps") || !j["fps"].is_number()) bad("missing fps");
  const double fps = j["fps"].get<double>();
  if (!(fps > 0.0)) bad("fps must be positive");
  if (!j.contains("coords") || !j["coords"].is_array() || j["coords"].empty()) {
    bad("coords must be a non-empty array");
  }
  const auto& fr = j["coords"];
  GestureSequence seq(layout, static_cast<int>(fr.size()), fps);
  for (std::size_t f = 0; f < fr.size(); ++f) {
    const auto& pts = fr[f];
    if (!pts.is_array() || pts.size() != static_cast<std::size_t>(layout->keypoints)) {
      bad("coords[" + std::to_string(f) + "]: expected " +
          std::to_string(layout->keypoints) + " keypoints");
    }
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const auto& p = pts[k];
      const std::string loc = "coords[" + std::to_string(f) + "][" + std::to_string(k) + "]";
      if (!p.is_array() || p.size() != 2) bad(loc + ": expected [x, y]");
      for (int d = 0; d < 2; ++d) {
        if (!p[d].is_number()) bad(loc + ": non-finite or non-numeric value");
        const double v = p[d].get<double>();
        if (!std::isfinite(v)) bad(loc + ": non-finite value");
        seq.at(static_cast<int>(f), static_cast<int>(k), d) = v;
      }
    }
  }
  return seq;
}

GestureSequence read_gesture_file(const fs::path& path, const std::string& expected_layout) {
  return gesture_from_json(read_text_file(path), path.string(), expected_layout);
}

void write_gesture_file(const GestureSequence& seq, const fs::path& path) {
  seq.validate();
  write_text_file(path, gesture_to_json(seq));
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail_data("cannot open manifest " + path.string());
  const fs::path dir = path.parent_path();
  std::vector<ManifestEntry> out;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail_data(where + ": malformed JSON: " + e.what());
    }
    ManifestEntry e;
    try {
      e.clip_id = j.at("clip_id").get<std::string>();
      e.gesture_path = j.at("gesture").get<std::string>();
      e.audio_path = j.at("audio").get<std::string>();
      e.speaker_id = j.value("speaker", std::string("unknown"));
      e.split = j.value("split", std::string("train"));
    } catch (const json::exception& ex) {
      fail_data(where + ": " + ex.what());
    }
    if (e.gesture_path.is_relative()) e.gesture_path = dir / e.gesture_path;
    if (e.audio_path.is_relative()) e.audio_path = dir / e.audio_path;
    if (!seen.insert(e.clip_id).second) {
      fail_data(where + ": duplicate clip_id '" + e.clip_id + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
  const fs::path dir = path.parent_path();
  std::string text;
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.clip_id).second) fail_data("duplicate clip_id '" + e.clip_id + "'");
    auto rel = [&](const fs::path& p) {
      return fs::absolute(p).lexically_relative(fs::absolute(dir)).generic_string();
    };
    json j = {{"clip_id", e.clip_id}, {"gesture", rel(e.gesture_path)},
              {"audio", rel(e.audio_path)}, {"speaker", e.speaker_id},
              {"split", e.split}};
    text += j.dump() + "\n";
  }
  write_text_file(path, text);
}

}  // namespace sdt
