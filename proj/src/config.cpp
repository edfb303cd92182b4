#include "popup/config.hpp"

#include <nlohmann/json.hpp>

#include "popup/checkpoint.hpp"

namespace popup {

void to_json(nlohmann::json& j, const SetAbstractionLevel& l) {
  j = nlohmann::json{{"centers", l.centers}, {"neighbors", l.neighbors}, {"mlp", l.mlp}};
}

void from_json(const nlohmann::json& j, SetAbstractionLevel& l) {
  j.at("centers").get_to(l.centers);
  j.at("neighbors").get_to(l.neighbors);
  j.at("mlp").get_to(l.mlp);
}

void to_json(nlohmann::json& j, const PopupConfig& c) {
  j = nlohmann::json{
      {"num_classes", c.num_classes},
      {"keypoint_count", c.keypoint_count},
      {"local_k", c.local_k},
      {"posenc_bands", c.posenc_bands},
      {"global_levels", c.global_levels},
      {"global_mlp", c.global_mlp},
      {"center_head", c.center_head},
      {"local_level", c.local_level},
      {"propagation_neighbors", c.propagation_neighbors},
      {"decoder_mlp", c.decoder_mlp},
      {"class_head", c.class_head},
      {"class_head_use_local", c.class_head_use_local},
      {"class_mlp", c.class_mlp},
      {"direct_rt", c.direct_rt},
      {"no_local_features", c.no_local_features},
      {"rt_mlp", c.rt_mlp},
  };
}

void from_json(const nlohmann::json& j, PopupConfig& c) {
  PopupConfig defaults;
  c = defaults;
  j.at("num_classes").get_to(c.num_classes);
  if (j.contains("keypoint_count")) j.at("keypoint_count").get_to(c.keypoint_count);
  if (j.contains("local_k")) j.at("local_k").get_to(c.local_k);
  if (j.contains("posenc_bands")) j.at("posenc_bands").get_to(c.posenc_bands);
  if (j.contains("global_levels")) j.at("global_levels").get_to(c.global_levels);
  if (j.contains("global_mlp")) j.at("global_mlp").get_to(c.global_mlp);
  if (j.contains("center_head")) j.at("center_head").get_to(c.center_head);
  if (j.contains("local_level")) j.at("local_level").get_to(c.local_level);
  if (j.contains("propagation_neighbors"))
    j.at("propagation_neighbors").get_to(c.propagation_neighbors);
  if (j.contains("decoder_mlp")) j.at("decoder_mlp").get_to(c.decoder_mlp);
  if (j.contains("class_head")) j.at("class_head").get_to(c.class_head);
  if (j.contains("class_head_use_local"))
    j.at("class_head_use_local").get_to(c.class_head_use_local);
  if (j.contains("class_mlp")) j.at("class_mlp").get_to(c.class_mlp);
  if (j.contains("direct_rt")) j.at("direct_rt").get_to(c.direct_rt);
  if (j.contains("no_local_features")) j.at("no_local_features").get_to(c.no_local_features);
  if (j.contains("rt_mlp")) j.at("rt_mlp").get_to(c.rt_mlp);
}

std::string PopupConfig::to_json_string() const {
  nlohmann::json j = *this;
  return j.dump();
}

PopupConfig PopupConfig::from_json_string(const std::string& s) {
  return nlohmann::json::parse(s).get<PopupConfig>();
}

std::uint64_t PopupConfig::hash() const { return fnv1a_hash(to_json_string()); }

}  // namespace popup
