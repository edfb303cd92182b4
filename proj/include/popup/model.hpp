#ifndef POPUP_MODEL_HPP
#define POPUP_MODEL_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "popup/checkpoint.hpp"
#include "popup/config.hpp"
#include "popup/geometry.hpp"
#include "popup/tensor.hpp"

namespace popup {

/// Canonical object template: mesh, surface key points (sampled once at
/// dataset build time) and its class id. Lives in the canonical frame with
/// the key-point centroid at the origin.
struct ObjectTemplate {
  std::size_t class_id = 0;
  std::string name;
  Mesh mesh;
  std::vector<Vec3> keypoints;
};

struct ClassEncoding {
  std::vector<double> one_hot;

  static ClassEncoding make(std::size_t class_id, std::size_t num_classes);
  std::size_t index() const;
};

ad::Matrix points_to_matrix(const std::vector<Vec3>& pts);
std::vector<Vec3> matrix_to_points(const ad::Matrix& m);

/// Everything one forward pass produces, kept as graph handles so losses
/// and saliency can backpropagate through any of it.
struct ForwardResult {
  ad::Var cloud;          // N×3 input leaf
  ad::Var center;         // 1×3 predicted object center
  ad::Var global_features;  // 1×F_g
  ad::Var local_features;   // M×F_l (invalid when no_local_features or direct_rt)
  ad::Var offsets;          // M×3 (invalid when direct_rt)
  ad::Var class_logits;     // 1×|C| (invalid unless class head enabled)
  ad::Var rt_params;        // 1×9 raw head output (direct_rt only)
  ad::Var rt_posed_keypoints;  // M×3 keypoints posed by the R,t head
  Vec3 center_used;         // the center the local stage was built around
  std::vector<std::size_t> local_indices;  // rows of the cloud in P_local
};

class PopupNetwork {
 public:
  static PopupNetwork init(const PopupConfig& config, std::uint64_t seed);
  static PopupNetwork from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint() const;

  const PopupConfig& config() const { return config_; }
  std::vector<ad::Var>& parameters() { return params_; }
  const std::vector<ad::Var>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  /// Full pass. `keypoints` are the canonical key points of the query class.
  /// `center_override` substitutes the center used for key-point placement
  /// and local-neighborhood selection (ground-truth warm-up, smoothed
  /// centers); the regressed center is always reported.
  /// `watch_input` marks the cloud leaf as a gradient target (saliency).
  ForwardResult forward(const ad::Matrix& cloud, std::size_t class_id,
                        const ad::Matrix& keypoints,
                        const std::optional<Vec3>& center_override = std::nullopt,
                        bool watch_input = false) const;

  // spec-level convenience surfaces (each runs the relevant slice of forward)
  std::pair<Vec3, std::vector<double>> encode_global(const PointCloud& cloud) const;
  std::vector<double> predict_class(const ad::Matrix& cloud) const;  // softmax over |C|

  /// Orthonormalizes the 1×9 head output into a rigid transform:
  /// 6D rotation (two residual columns, Gram-Schmidt) plus a translation
  /// offset added to the center used.
  static RigidTransform rt_params_to_transform(const std::vector<double>& params9,
                                               const Vec3& center_used);

  // building blocks, exposed for tests and for the training loop
  struct GlobalOut {
    ad::Var center;    // 1×3
    ad::Var features;  // 1×F_g
  };
  GlobalOut run_global(const ad::Var& cloud_var) const;
  /// Per-keypoint features from the union of ô-centered key points and the
  /// local neighborhood, interpolated back to key-point locations.
  ad::Var run_local(const ad::Var& cloud_var, const ad::Var& center_used,
                    const ad::Matrix& keypoints,
                    std::vector<std::size_t>* local_indices_out = nullptr) const;
  /// Shared-weight offset decoder over [posenc ‖ F_l ‖ F_g ‖ one-hot].
  ad::Var run_decoder(const ad::Matrix& keypoints, const ad::Var& f_local,
                      const ad::Var& f_global, std::size_t class_id) const;
  ad::Var run_class_head(const ad::Var& f_global, const ad::Var& f_local_pooled) const;
  /// Class-agnostic pooled local features (set abstraction over the local
  /// neighborhood alone), used by the class head's global+local variant.
  ad::Var run_local_pooled(const ad::Var& cloud_var, const ad::Var& center_used) const;
  struct RtOut {
    ad::Var params;            // 1×9
    ad::Var posed_keypoints;   // M×3
  };
  /// Ablation head: R,t regressed from the global encoding alone (the
  /// local/offset machinery it replaces stays unused).
  RtOut run_rt_head(const ad::Var& f_global, std::size_t class_id, const ad::Var& center_used,
                    const ad::Matrix& keypoints) const;

 private:
  PopupConfig config_;
  std::vector<ad::Var> params_;
  std::map<std::string, ad::Var> by_name_;

  ad::Var param(const std::string& name) const;
  ad::Var run_mlp(const std::string& prefix, const ad::Var& input, std::size_t hidden_layers,
                  bool has_out) const;
  ad::Var run_set_abstraction(const std::string& prefix, const SetAbstractionLevel& level,
                              const ad::Var& positions, const ad::Var& features,
                              ad::Var* out_positions) const;
};

/// Sinusoidal positional encoding: raw xyz plus sin/cos at `bands`
/// frequencies per axis (constant wrt parameters).
ad::Matrix positional_encoding(const ad::Matrix& points, std::size_t bands);

}  // namespace popup

#endif  // POPUP_MODEL_HPP
