#ifndef POPUP_CONFIG_HPP
#define POPUP_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace popup {

/// One hierarchical set-abstraction level: FPS down to `centers` points,
/// group `neighbors` nearest points per center, shared MLP, max-pool.
struct SetAbstractionLevel {
  std::size_t centers = 128;
  std::size_t neighbors = 32;
  std::vector<std::size_t> mlp = {64, 128};
};

struct PopupConfig {
  std::size_t num_classes = 4;
  std::size_t keypoint_count = 1500;
  // main-text value; the appendix types the neighborhood as 2000 points
  std::size_t local_k = 3000;
  std::size_t posenc_bands = 6;

  std::vector<SetAbstractionLevel> global_levels = {
      {512, 32, {64, 64, 128}},
      {128, 64, {128, 128, 256}},
  };
  std::vector<std::size_t> global_mlp = {512};  // pooled feature -> F_global
  std::vector<std::size_t> center_head = {256}; // hidden widths, output is 3

  SetAbstractionLevel local_level = {256, 32, {64, 128}};
  std::size_t propagation_neighbors = 3;

  std::vector<std::size_t> decoder_mlp = {256, 256, 256, 256};

  bool class_head = false;
  bool class_head_use_local = false;  // default predicts from F_global only
  std::vector<std::size_t> class_mlp = {256};

  bool direct_rt = false;           // ablation: regress R,t instead of offsets
  bool no_local_features = false;   // ablation: drop the local encoder
  std::vector<std::size_t> rt_mlp = {256, 256};

  std::size_t global_feature_dim() const { return global_mlp.back(); }
  std::size_t local_feature_dim() const { return local_level.mlp.back(); }
  std::size_t posenc_dim() const { return 3 + 6 * posenc_bands; }

  std::string to_json_string() const;
  static PopupConfig from_json_string(const std::string& s);
  std::uint64_t hash() const;
};

void to_json(nlohmann::json& j, const SetAbstractionLevel& l);
void from_json(const nlohmann::json& j, SetAbstractionLevel& l);
void to_json(nlohmann::json& j, const PopupConfig& c);
void from_json(const nlohmann::json& j, PopupConfig& c);

}  // namespace popup

#endif  // POPUP_CONFIG_HPP
