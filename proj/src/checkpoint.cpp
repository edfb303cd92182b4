#include "popup/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "popup/io.hpp"

namespace popup {

namespace {
constexpr char kMagic[8] = {'P', 'O', 'P', 'C', 'K', 'P', 'T', '\0'};
}

std::uint64_t fnv1a_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["version"] = kVersion;
  header["config_hash"] = config_hash;
  header["config"] = config_json;
  header["adam_step"] = adam_step;
  auto& shapes = header["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : tensors) {
    shapes.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  std::string header_str = header.dump();

  std::string blob;
  blob.append(kMagic, 8);
  std::uint32_t version = kVersion;
  std::uint64_t header_len = header_str.size();
  blob.append(reinterpret_cast<const char*>(&version), 4);
  blob.append(reinterpret_cast<const char*>(&header_len), 8);
  blob.append(header_str);
  for (const auto& [name, m] : tensors) {
    blob.append(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(double));
  }
  io::write_file_atomic(path, blob);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::IoError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string blob = ss.str();

  if (blob.size() < 20 || std::memcmp(blob.data(), kMagic, 8) != 0)
    throw io::IoError("not a checkpoint file: " + path.string());
  std::uint32_t version;
  std::uint64_t header_len;
  std::memcpy(&version, blob.data() + 8, 4);
  std::memcpy(&header_len, blob.data() + 12, 8);
  if (version != kVersion)
    throw io::IoError("unsupported checkpoint version " + std::to_string(version));
  if (blob.size() < 20 + header_len) throw io::IoError("truncated checkpoint: " + path.string());

  auto header = nlohmann::json::parse(blob.substr(20, header_len));
  Checkpoint ckpt;
  ckpt.config_hash = header.at("config_hash").get<std::uint64_t>();
  ckpt.config_json = header.at("config").get<std::string>();
  ckpt.adam_step = header.at("adam_step").get<std::size_t>();

  std::size_t offset = 20 + header_len;
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    std::size_t rows = entry.at("rows").get<std::size_t>();
    std::size_t cols = entry.at("cols").get<std::size_t>();
    std::size_t bytes = rows * cols * sizeof(double);
    if (blob.size() < offset + bytes)
      throw io::IoError("truncated tensor data in checkpoint: " + path.string());
    ad::Matrix m(rows, cols);
    std::memcpy(m.data(), blob.data() + offset, bytes);
    offset += bytes;
    ckpt.tensors.emplace(std::move(name), std::move(m));
  }
  return ckpt;
}

}  // namespace popup
