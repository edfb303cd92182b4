#ifndef POPUP_BASELINE_HPP
#define POPUP_BASELINE_HPP

#include <functional>

#include "popup/pipeline.hpp"

namespace popup {

/// Retrieval is undefined when the query and bank disagree on point count or
/// ordering convention.
struct NotApplicableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Memorized training frames for nearest-neighbor retrieval: clouds with a
/// shared point count and ordering, plus the object answer stored with each.
struct TrainBank {
  std::vector<ad::Matrix> clouds;
  std::vector<RigidTransform> poses;       // canonical -> scene, per entry
  std::vector<std::size_t> classes;

  std::size_t size() const { return clouds.size(); }
  void validate() const;  // equal sizes, consistent counts
};

struct NnResult {
  std::size_t index = 0;
  std::size_t class_id = 0;
  RigidTransform pose;
  double distance = 0;  // Frobenius distance to the matched cloud
};

/// Builds the bank from every frame of a dataset split.
TrainBank build_train_bank(const Dataset& dataset, const std::string& split,
                           std::size_t points = 0);

/// Exact argmin of the Frobenius distance over the (optionally
/// class-filtered) bank; ties go to the lowest index.
NnResult nn_retrieve(const ad::Matrix& query, const TrainBank& bank,
                     std::optional<std::size_t> class_filter = std::nullopt);

struct MetricsReport {
  double e_center = 0;     // mean E_c
  double e_v2v = -1;       // mean E_v2v (given-class mode), -1 if absent
  double e_chamfer = -1;   // mean E_ch (predicted-class mode), -1 if absent
  double accuracy = -1;    // % correct class (predicted-class mode), -1 if absent
  std::vector<std::vector<std::size_t>> confusion;  // rows = ground truth
  std::size_t samples = 0;
  std::size_t skipped = 0;  // frames without ground truth
  std::vector<double> per_sample_center;   // persisted for significance checks
  std::vector<double> per_sample_shape;    // E_v2v or E_ch per sample

  std::string to_text_table() const;
  std::string to_json_string() const;
  static MetricsReport from_json_string(const std::string& s);
  std::string confusion_csv() const;
};

enum class EvalMode { GivenClass, PredictedClass };

/// A predictor maps (cloud, optional class) to a pose answer.
struct PredictionSample {
  ad::Matrix cloud;
  std::optional<FrameGroundTruth> gt;
  std::size_t gt_class = 0;
};

struct PredictorOutput {
  Vec3 center = Vec3::Zero();
  std::vector<Vec3> posed_keypoints;
  std::size_t class_id = 0;
};

using Predictor =
    std::function<PredictorOutput(const ad::Matrix& cloud, std::optional<std::size_t> class_id)>;

/// Evaluation harness. Given-class mode scores E_c and E_v2v against the
/// ground-truth-posed template key points; predicted-class mode scores E_c,
/// Chamfer and classification accuracy, and fills the confusion matrix.
/// Samples without ground truth are skipped and counted.
MetricsReport evaluate(const std::vector<PredictionSample>& samples,
                       const std::vector<ObjectTemplate>& templates, const Predictor& predictor,
                       EvalMode mode, std::size_t num_classes);

/// Count matrix from (ground truth, predicted) pairs; rows = ground truth.
std::vector<std::vector<std::size_t>> confusion_matrix(
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs, std::size_t num_classes);

}  // namespace popup

#endif  // POPUP_BASELINE_HPP
