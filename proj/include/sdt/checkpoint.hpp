#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "sdt/tensor.hpp"

namespace sdt {

inline constexpr int kCheckpointVersion = 1;

// Single-file container: magic "SDTCKPT\0", u32 version, u64 header length,
// JSON header (metadata + tensor directory), then every tensor as raw
// little-endian IEEE-754 doubles in directory order. Values round-trip
// bit-for-bit.
struct CheckpointData {
  int version = kCheckpointVersion;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(const std::string& name, const Tensor& t) { tensors.emplace_back(name, t); }
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

std::string serialize_checkpoint(const CheckpointData& ckpt);
CheckpointData deserialize_checkpoint(const std::string& bytes, const std::string& where);

void save_checkpoint(const CheckpointData& ckpt, const std::filesystem::path& path);
CheckpointData load_checkpoint(const std::filesystem::path& path);

}  // namespace sdt
