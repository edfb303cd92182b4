#include "popup/baseline.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "popup/training.hpp"

namespace popup {

void TrainBank::validate() const {
  if (clouds.size() != poses.size() || clouds.size() != classes.size())
    throw DataError("train bank: field lengths differ");
  if (clouds.empty()) throw DataError("train bank: empty");
  for (const auto& c : clouds)
    if (c.rows() != clouds.front().rows() || c.cols() != 3)
      throw DataError("train bank: inconsistent cloud shapes");
}

TrainBank build_train_bank(const Dataset& dataset, const std::string& split,
                           std::size_t points) {
  TrainBank bank;
  for (auto si : dataset.sequence_indices(split)) {
    auto seq = dataset.load_sequence(si);
    for (std::size_t f = 0; f < seq.clouds.size(); ++f) {
      bank.clouds.push_back(subsample_cloud_stride(seq.clouds[f], points));
      bank.poses.push_back(seq.gt[f].pose);
      bank.classes.push_back(seq.meta.class_id);
    }
  }
  bank.validate();
  return bank;
}

NnResult nn_retrieve(const ad::Matrix& query, const TrainBank& bank,
                     std::optional<std::size_t> class_filter) {
  bank.validate();
  if (query.rows() != bank.clouds.front().rows() || query.cols() != 3)
    throw NotApplicableError(
        "nn_retrieve: query point count/order does not match the bank; "
        "retrieval is not applicable");

  bool found = false;
  std::size_t best = 0;
  double best_d2 = 0;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (class_filter && bank.classes[i] != *class_filter) continue;
    double d2 = 0;
    const auto& c = bank.clouds[i];
    for (std::size_t k = 0; k < c.size(); ++k) {
      double d = query.at(k) - c.at(k);
      d2 += d * d;
    }
    if (!found || d2 < best_d2) {
      found = true;
      best = i;
      best_d2 = d2;
    }
  }
  if (!found) throw DataError("nn_retrieve: no bank entry matches the class filter");

  NnResult out;
  out.index = best;
  out.class_id = bank.classes[best];
  out.pose = bank.poses[best];
  out.distance = std::sqrt(best_d2);
  return out;
}

std::vector<std::vector<std::size_t>> confusion_matrix(
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs, std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> m(num_classes,
                                          std::vector<std::size_t>(num_classes, 0));
  for (const auto& [gt, pred] : pairs) {
    if (gt >= num_classes || pred >= num_classes)
      throw DataError("confusion_matrix: class id out of range");
    ++m[gt][pred];
  }
  return m;
}

MetricsReport evaluate(const std::vector<PredictionSample>& samples,
                       const std::vector<ObjectTemplate>& templates, const Predictor& predictor,
                       EvalMode mode, std::size_t num_classes) {
  MetricsReport report;
  std::vector<std::pair<std::size_t, std::size_t>> class_pairs;
  double sum_c = 0, sum_shape = 0;

  for (const auto& s : samples) {
    if (!s.gt) {
      ++report.skipped;
      continue;
    }
    std::optional<std::size_t> given;
    if (mode == EvalMode::GivenClass) given = s.gt_class;
    PredictorOutput pred = predictor(s.cloud, given);

    const auto& tmpl = templates.at(s.gt_class);
    std::vector<Vec3> gt_kp = s.gt->pose.apply(tmpl.keypoints);

    double ec = (pred.center - s.gt->center).norm();
    sum_c += ec;
    report.per_sample_center.push_back(ec);

    double shape;
    if (mode == EvalMode::GivenClass) {
      shape = v2v_error(pred.posed_keypoints, gt_kp);
    } else {
      shape = chamfer_distance(pred.posed_keypoints, gt_kp);
      class_pairs.emplace_back(s.gt_class, pred.class_id);
    }
    sum_shape += shape;
    report.per_sample_shape.push_back(shape);
    ++report.samples;
  }

  if (report.samples == 0) throw DataError("evaluate: no samples with ground truth");
  double n = static_cast<double>(report.samples);
  report.e_center = sum_c / n;
  if (mode == EvalMode::GivenClass) {
    report.e_v2v = sum_shape / n;
  } else {
    report.e_chamfer = sum_shape / n;
    report.confusion = confusion_matrix(class_pairs, num_classes);
    std::size_t correct = 0;
    for (std::size_t c = 0; c < num_classes; ++c) correct += report.confusion[c][c];
    report.accuracy = 100.0 * static_cast<double>(correct) / n;
  }
  return report;
}

std::string MetricsReport::to_text_table() const {
  std::ostringstream os;
  os << "samples: " << samples << "  skipped: " << skipped << "\n";
  os << "E_c:  " << e_center << "\n";
  if (e_v2v >= 0) os << "E_v2v: " << e_v2v << "\n";
  if (e_chamfer >= 0) os << "E_ch:  " << e_chamfer << "\n";
  if (accuracy >= 0) os << "accuracy: " << accuracy << "%\n";
  if (!confusion.empty()) {
    os << "confusion (rows = ground truth):\n";
    for (const auto& row : confusion) {
      for (std::size_t c = 0; c < row.size(); ++c) os << (c ? " " : "  ") << row[c];
      os << "\n";
    }
  }
  return os.str();
}

std::string MetricsReport::to_json_string() const {
  nlohmann::json j{{"e_center", e_center},
                   {"e_v2v", e_v2v},
                   {"e_chamfer", e_chamfer},
                   {"accuracy", accuracy},
                   {"confusion", confusion},
                   {"samples", samples},
                   {"skipped", skipped},
                   {"per_sample_center", per_sample_center},
                   {"per_sample_shape", per_sample_shape}};
  return j.dump(2);
}

MetricsReport MetricsReport::from_json_string(const std::string& s) {
  auto j = nlohmann::json::parse(s);
  MetricsReport r;
  j.at("e_center").get_to(r.e_center);
  j.at("e_v2v").get_to(r.e_v2v);
  j.at("e_chamfer").get_to(r.e_chamfer);
  j.at("accuracy").get_to(r.accuracy);
  j.at("confusion").get_to(r.confusion);
  j.at("samples").get_to(r.samples);
  j.at("skipped").get_to(r.skipped);
  j.at("per_sample_center").get_to(r.per_sample_center);
  j.at("per_sample_shape").get_to(r.per_sample_shape);
  return r;
}

std::string MetricsReport::confusion_csv() const {
  std::ostringstream os;
  for (const auto& row : confusion) {
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
    os << "\n";
  }
  return os.str();
}

}  // namespace popup
