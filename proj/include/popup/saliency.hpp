#ifndef POPUP_SALIENCY_HPP
#define POPUP_SALIENCY_HPP

#include "popup/model.hpp"

namespace popup {

/// Trace of the iterative point-dropping procedure.
struct SaliencyResult {
  std::vector<double> scores;                        // from the first iteration
  std::vector<std::vector<std::size_t>> masks;       // touched indices per iteration
  std::vector<ad::Matrix> clouds;                    // cloud after each iteration
  std::vector<double> loss_trace;                    // offset loss per iteration
};

/// Per-point importance for the offset loss: with the cloud median p_m and
/// r_i = p_i - p_m, backpropagates the loss to the input (g_i) and scores
/// s_i = -|r_i| (r_i . g_i). High scores mark points whose removal toward
/// the median would increase the loss fastest.
std::vector<double> saliency_scores(const ad::Matrix& cloud, std::size_t class_id,
                                    const std::vector<Vec3>& gt_keypoints,
                                    const PopupNetwork& net, const ad::Matrix& keypoints);

/// Repeats: score, pick the top ceil(frac*N) points, move each toward the
/// current median by `step` of its median-relative vector, substitute, and
/// restart. Ties in the score go to the lower index.
SaliencyResult saliency_iterate(const ad::Matrix& cloud, std::size_t class_id,
                                const std::vector<Vec3>& gt_keypoints, const PopupNetwork& net,
                                const ad::Matrix& keypoints, std::size_t iters = 10,
                                double frac = 0.01, double step = 0.05);

}  // namespace popup

#endif  // POPUP_SALIENCY_HPP
