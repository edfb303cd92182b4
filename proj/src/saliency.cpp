#include "popup/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "popup/dataset.hpp"

namespace popup {

namespace {

struct LossGrad {
  double loss = 0;
  ad::Matrix grad;  // N×3, d loss / d cloud
};

LossGrad offset_loss_input_grad(const ad::Matrix& cloud, std::size_t class_id,
                                const std::vector<Vec3>& gt_keypoints, const PopupNetwork& net,
                                const ad::Matrix& keypoints) {
  if (net.config().direct_rt)
    throw DataError("saliency: the offset loss is undefined for the direct R,t head");
  if (gt_keypoints.size() != keypoints.rows())
    throw DataError("saliency: ground-truth keypoint count mismatch");

  auto fwd = net.forward(cloud, class_id, keypoints, std::nullopt, /*watch_input=*/true);

  ad::Matrix gt_off(keypoints.rows(), 3);
  const Vec3& cu = fwd.center_used;
  for (std::size_t i = 0; i < keypoints.rows(); ++i) {
    gt_off(i, 0) = gt_keypoints[i].x() - (keypoints(i, 0) + cu.x());
    gt_off(i, 1) = gt_keypoints[i].y() - (keypoints(i, 1) + cu.y());
    gt_off(i, 2) = gt_keypoints[i].z() - (keypoints(i, 2) + cu.z());
  }
  ad::Var loss = ad::sum_squares(ad::sub(fwd.offsets, ad::Var::leaf(std::move(gt_off))));
  ad::backward(loss);

  LossGrad out;
  out.loss = loss.value()(0, 0);
  if (fwd.cloud.has_grad())
    out.grad = fwd.cloud.grad();
  else
    out.grad = ad::Matrix(cloud.rows(), 3);
  return out;
}

std::vector<double> scores_from(const ad::Matrix& cloud, const ad::Matrix& grad,
                                const Vec3& median) {
  std::vector<double> s(cloud.rows());
  for (std::size_t i = 0; i < cloud.rows(); ++i) {
    Vec3 r(cloud(i, 0) - median.x(), cloud(i, 1) - median.y(), cloud(i, 2) - median.z());
    Vec3 g(grad(i, 0), grad(i, 1), grad(i, 2));
    s[i] = -r.norm() * r.dot(g);
  }
  return s;
}

std::vector<std::size_t> top_indices(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

}  // namespace

std::vector<double> saliency_scores(const ad::Matrix& cloud, std::size_t class_id,
                                    const std::vector<Vec3>& gt_keypoints,
                                    const PopupNetwork& net, const ad::Matrix& keypoints) {
  auto lg = offset_loss_input_grad(cloud, class_id, gt_keypoints, net, keypoints);
  Vec3 median = coordinate_median(PointCloud{matrix_to_points(cloud)});
  return scores_from(cloud, lg.grad, median);
}

SaliencyResult saliency_iterate(const ad::Matrix& cloud, std::size_t class_id,
                                const std::vector<Vec3>& gt_keypoints, const PopupNetwork& net,
                                const ad::Matrix& keypoints, std::size_t iters, double frac,
                                double step) {
  if (frac <= 0 || frac > 1) throw DataError("saliency: frac must be in (0, 1]");
  const std::size_t n = cloud.rows();
  const std::size_t k =
      static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n)));

  SaliencyResult result;
  ad::Matrix current = cloud;
  for (std::size_t it = 0; it < iters; ++it) {
    auto lg = offset_loss_input_grad(current, class_id, gt_keypoints, net, keypoints);
    Vec3 median = coordinate_median(PointCloud{matrix_to_points(current)});
    auto scores = scores_from(current, lg.grad, median);
    if (it == 0) result.scores = scores;
    result.loss_trace.push_back(lg.loss);

    auto chosen = top_indices(scores, k);
    for (auto i : chosen) {
      for (std::size_t c = 0; c < 3; ++c) {
        double r = current(i, c) - median[static_cast<Eigen::Index>(c)];
        current(i, c) -= step * r;
      }
    }
    std::sort(chosen.begin(), chosen.end());
    result.masks.push_back(std::move(chosen));
    result.clouds.push_back(current);
  }
  return result;
}

}  // namespace popup
