#ifndef POPUP_CHECKPOINT_HPP
#define POPUP_CHECKPOINT_HPP

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "popup/tensor.hpp"

namespace popup {

/// Self-describing checkpoint container: a versioned header, a JSON block
/// (named tensor shapes, embedded config, optional optimizer scalars) and a
/// raw little-endian f64 payload.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, ad::Matrix> tensors;  // parameters + moment buffers
  std::string config_json;                    // architecture config, embedded
  std::uint64_t config_hash = 0;
  std::size_t adam_step = 0;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// FNV-1a over a canonical string; used to fingerprint configs.
std::uint64_t fnv1a_hash(const std::string& s);

}  // namespace popup

#endif  // POPUP_CHECKPOINT_HPP
