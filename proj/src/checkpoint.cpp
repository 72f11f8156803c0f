#include "sdt/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>

#include "sdt/error.hpp"
#include "sdt/gesture.hpp"

namespace sdt {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'D', 'T', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos, const std::string& where) {
  if (pos + sizeof(T) > in.size()) fail_data(where + ": truncated checkpoint");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

const Tensor& CheckpointData::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  fail_data("checkpoint has no tensor '" + name + "'");
}

bool CheckpointData::has(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

std::string serialize_checkpoint(const CheckpointData& ckpt) {
  json dir = json::array();
  for (const auto& [name, t] : ckpt.tensors) dir.push_back({{"name", name}, {"shape", t.shape()}});
  const json header = {{"meta", ckpt.meta}, {"tensors", dir}};
  const std::string htext = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.version));
  put<std::uint64_t>(out, htext.size());
  out += htext;
  for (const auto& [name, t] : ckpt.tensors) {
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  return out;
}

CheckpointData deserialize_checkpoint(const std::string& bytes, const std::string& where) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    fail_data(where + ": not a checkpoint file");
  }
  std::size_t pos = sizeof kMagic;
  CheckpointData ckpt;
  ckpt.version = static_cast<int>(take<std::uint32_t>(bytes, pos, where));
  if (ckpt.version != kCheckpointVersion) {
    fail_data(where + ": unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  const auto hlen = take<std::uint64_t>(bytes, pos, where);
  if (pos + hlen > bytes.size()) fail_data(where + ": truncated checkpoint header");
  json header;
  try {
    header = json::parse(bytes.substr(pos, hlen));
    pos += hlen;
    ckpt.meta = header.at("meta");
    for (const auto& e : header.at("tensors")) {
      Tensor t(e.at("shape").get<std::vector<int>>());
      const std::size_t nbytes = t.size() * sizeof(double);
      if (pos + nbytes > bytes.size()) fail_data(where + ": truncated tensor data");
      std::memcpy(t.data(), bytes.data() + pos, nbytes);
      pos += nbytes;
      ckpt.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const json::exception& e) {
    fail_data(where + ": corrupt checkpoint header: " + e.what());
  }
  if (pos != bytes.size()) fail_data(where + ": trailing bytes after checkpoint data");
  return ckpt;
}

void save_checkpoint(const CheckpointData& ckpt, const std::filesystem::path& path) {
  write_text_file(path, serialize_checkpoint(ckpt));
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_text_file(path), path.string());
}

}  // namespace sdt
