#include "popup/pipeline.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace popup {

std::string PoseEstimate::to_json_line(std::size_t frame_index) const {
  std::vector<double> r(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[static_cast<std::size_t>(3 * i + j)] = transform.R(i, j);
  nlohmann::json j{{"frame", frame_index},
                   {"R", r},
                   {"t", {transform.t.x(), transform.t.y(), transform.t.z()}},
                   {"center", {center.x(), center.y(), center.z()}},
                   {"class", class_used},
                   {"unique_fit", unique_fit}};
  if (!class_distribution.empty()) j["class_scores"] = class_distribution;
  return j.dump();
}

FitResult fit_template(const ad::Matrix& canonical_keypoints, const Vec3& center,
                       const ad::Matrix& offsets, const ObjectTemplate& tmpl) {
  if (!canonical_keypoints.same_shape(offsets))
    throw GeometryError("fit_template: keypoint/offset shape mismatch");
  std::vector<Vec3> src = matrix_to_points(canonical_keypoints);
  std::vector<Vec3> dst(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = src[i] + center +
             Vec3(offsets(i, 0), offsets(i, 1), offsets(i, 2));
  }
  auto fit = procrustes_align(src, dst);

  FitResult out;
  out.transform = fit.transform;
  out.unique = fit.unique;
  out.posed_mesh = tmpl.mesh;
  for (auto& v : out.posed_mesh.vertices) v = fit.transform.apply(v);
  out.posed_keypoints = fit.transform.apply(src);
  return out;
}

namespace {

std::vector<double> softmax_values(const ad::Matrix& logits) {
  std::vector<double> out(logits.size());
  double mx = logits.at(0);
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits.at(i));
  double sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits.at(i) - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

Vec3 row_to_vec3(const ad::Matrix& m) { return Vec3(m(0, 0), m(0, 1), m(0, 2)); }

}  // namespace

PoseEstimate popup_single(const ad::Matrix& cloud, std::size_t class_id,
                          const PopupNetwork& net, const ObjectTemplate& tmpl,
                          const std::optional<Vec3>& center_override) {
  if (cloud.rows() == 0) throw DataError("popup_single: empty cloud");
  if (tmpl.class_id != class_id) throw DataError("popup_single: template/class mismatch");

  ad::Matrix keypoints = points_to_matrix(tmpl.keypoints);
  auto fwd = net.forward(cloud, class_id, keypoints, center_override);

  PoseEstimate est;
  est.center = fwd.center_used;
  est.class_used = class_id;
  if (net.config().class_head) est.class_distribution = softmax_values(fwd.class_logits.value());

  if (net.config().direct_rt) {
    std::vector<double> params(fwd.rt_params.value().vec());
    est.transform = PopupNetwork::rt_params_to_transform(params, fwd.center_used);
    est.posed_template = tmpl.mesh;
    for (auto& v : est.posed_template.vertices) v = est.transform.apply(v);
    est.posed_keypoints = est.transform.apply(tmpl.keypoints);
  } else {
    est.offsets = fwd.offsets.value();
    auto fit = fit_template(keypoints, fwd.center_used, est.offsets, tmpl);
    est.transform = fit.transform;
    est.posed_template = std::move(fit.posed_mesh);
    est.posed_keypoints = std::move(fit.posed_keypoints);
    est.unique_fit = fit.unique;
  }
  return est;
}

std::vector<Vec3> smooth_sequence(const std::vector<Vec3>& centers, double sigma) {
  if (centers.empty()) throw DataError("smooth_sequence: empty trajectory");
  if (sigma <= 0) return centers;

  const std::ptrdiff_t radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (std::ptrdiff_t k = -radius; k <= radius; ++k)
    kernel[static_cast<std::size_t>(k + radius)] =
        std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));

  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(centers.size());
  std::vector<Vec3> out(centers.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    Vec3 acc = Vec3::Zero();
    double wsum = 0;
    for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
      std::ptrdiff_t j = i + k;
      if (j < 0 || j >= n) continue;  // boundary renormalization, no padding
      double w = kernel[static_cast<std::size_t>(k + radius)];
      acc += w * centers[static_cast<std::size_t>(j)];
      wsum += w;
    }
    out[static_cast<std::size_t>(i)] = acc / wsum;
  }
  return out;
}

std::size_t vote_class(const std::vector<std::vector<double>>& per_frame, bool max_score) {
  if (per_frame.empty()) throw DataError("vote_class: no frames");
  const std::size_t num_classes = per_frame.front().size();
  if (num_classes == 0) throw DataError("vote_class: empty distribution");

  std::vector<double> score_sum(num_classes, 0.0);
  std::vector<std::size_t> votes(num_classes, 0);
  for (const auto& dist : per_frame) {
    if (dist.size() != num_classes) throw DataError("vote_class: inconsistent class counts");
    std::size_t best = 0;
    for (std::size_t c = 1; c < num_classes; ++c)
      if (dist[c] > dist[best]) best = c;
    ++votes[best];
    for (std::size_t c = 0; c < num_classes; ++c) score_sum[c] += dist[c];
  }

  std::size_t winner = 0;
  if (max_score) {
    for (std::size_t c = 1; c < num_classes; ++c)
      if (score_sum[c] > score_sum[winner]) winner = c;
    return winner;
  }
  for (std::size_t c = 1; c < num_classes; ++c) {
    if (votes[c] > votes[winner] ||
        (votes[c] == votes[winner] && score_sum[c] > score_sum[winner]))
      winner = c;
  }
  return winner;
}

std::vector<PoseEstimate> popup_sequence(const FrameSequence& seq, const PopupNetwork& net,
                                         const std::vector<ObjectTemplate>& templates,
                                         const SequenceOptions& options) {
  if (seq.frames.empty()) throw DataError("popup_sequence: empty sequence");

  // pass 1: per-frame centers and class scores
  std::vector<Vec3> centers;
  std::vector<std::vector<double>> scores;
  centers.reserve(seq.frames.size());
  for (const auto& frame : seq.frames) {
    PointCloud pc{matrix_to_points(frame.cloud)};
    centers.push_back(net.encode_global(pc).first);
    if (net.config().class_head) scores.push_back(net.predict_class(frame.cloud));
  }

  std::size_t class_id;
  if (options.class_id) {
    class_id = *options.class_id;
  } else {
    if (scores.empty())
      throw DataError("popup_sequence: no class given and the model has no class head");
    class_id = vote_class(scores, options.vote_by_max_score);
  }
  if (class_id >= templates.size()) throw DataError("popup_sequence: class id out of range");
  const ObjectTemplate& tmpl = templates[class_id];

  std::vector<Vec3> smoothed = smooth_sequence(centers, options.smoothing_sigma);

  // pass 2: re-decode around the smoothed centers and refit
  std::vector<PoseEstimate> out;
  out.reserve(seq.frames.size());
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    PoseEstimate est = popup_single(seq.frames[f].cloud, class_id, net, tmpl, smoothed[f]);
    if (!scores.empty()) est.class_distribution = scores[f];
    out.push_back(std::move(est));
  }
  return out;
}

FrameSequence downsample_sequence(const FrameSequence& seq, double target_fps) {
  if (target_fps <= 0) throw DataError("downsample_sequence: target fps must be positive");
  if (target_fps > seq.fps)
    throw DataError("downsample_sequence: target fps exceeds source fps");
  std::size_t stride =
      static_cast<std::size_t>(std::llround(seq.fps / target_fps));
  if (stride < 1) stride = 1;

  FrameSequence out;
  out.fps = seq.fps / static_cast<double>(stride);
  for (std::size_t f = 0; f < seq.frames.size(); f += stride) out.frames.push_back(seq.frames[f]);
  return out;
}

}  // namespace popup
