#ifndef POPUP_TRAINING_HPP
#define POPUP_TRAINING_HPP

#include <filesystem>
#include <optional>

#include "popup/dataset.hpp"
#include "popup/model.hpp"
#include "popup/rng.hpp"

namespace popup {

struct TrainConfig {
  std::size_t epochs = 60;
  double lr = 1e-4;
  std::vector<std::size_t> lr_decay_epochs = {30, 40};  // lr divides by factor at each
  double lr_decay_factor = 10.0;
  std::size_t warmup_epochs_gt_center = 20;  // epochs using ô_gt for the local stage
  double alpha = 10.0;                       // offset loss weight; 100 with the class head
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double aug_translation = 0.05;    // uniform in [-x, x]^3 (m)
  double aug_rotation_deg = 15.0;   // axis uniform, angle uniform in [-a, a]
  std::size_t train_points = 0;     // stride-subsample input clouds to this count (0 = all)
  bool validate_each_epoch = true;

  void validate() const;
  double learning_rate_at(std::size_t epoch) const;
  std::string to_json_string() const;
  static TrainConfig from_json_string(const std::string& s);
};

struct TrainSample {
  ad::Matrix cloud;
  std::size_t class_id = 0;
  Vec3 gt_center = Vec3::Zero();
  std::vector<Vec3> gt_keypoints;  // posed template key points
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss_total = 0, loss_center = 0, loss_offset = 0, loss_class = 0;
  double lr = 0;
  double wall_seconds = 0;
  double val_center_error = -1;  // mean E_c on the validation set, -1 if skipped

  std::string to_json_line() const;
};

struct TrainResult {
  Checkpoint checkpoint;  // final (or last good, on divergence)
  std::vector<EpochLog> log;
  bool diverged = false;
  std::size_t completed_epochs = 0;
};

// ---- losses (Eq. 1-3 shapes) ----

/// Squared L2 distance between predicted and ground-truth centers.
double loss_center(const Vec3& pred, const Vec3& gt);
/// Squared Frobenius norm of the offset residual.
double loss_offset(const ad::Matrix& pred, const ad::Matrix& gt);
/// L = L_c + α·L_off (+ L_cel when the class loss is present).
double total_loss(double l_center, double l_offset, std::optional<double> l_class, double alpha);

/// Applies one random rigid motion (rotation about the ground-truth center
/// plus translation) to the whole scene: the human cloud, the key points and
/// the center together.
TrainSample augment_sample(const TrainSample& sample, double translation_range,
                           double rotation_range_deg, Rng& rng);

/// Keeps every ceil(N/m)-th point; correspondence-preserving and
/// deterministic.
ad::Matrix subsample_cloud_stride(const ad::Matrix& cloud, std::size_t m);

/// Builds training samples for a split. Ground-truth key points come from
/// the stored pose applied to the class template.
std::vector<TrainSample> build_samples(const Dataset& dataset, const std::string& split,
                                       std::size_t train_points = 0);

/// End-to-end training loop: Adam, step LR schedule, ground-truth-center
/// warm-up for the local stage, per-epoch logs. Fully seeded; the same seed
/// yields identical final parameters.
TrainResult train(const TrainConfig& config, const PopupConfig& model_config,
                  const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set,
                  const std::vector<ObjectTemplate>& templates,
                  const std::optional<std::filesystem::path>& log_path = std::nullopt);

}  // namespace popup

#endif  // POPUP_TRAINING_HPP
