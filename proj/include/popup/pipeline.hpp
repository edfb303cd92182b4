#ifndef POPUP_PIPELINE_HPP
#define POPUP_PIPELINE_HPP

#include <optional>

#include "popup/dataset.hpp"
#include "popup/model.hpp"

namespace popup {

/// One frame's full pose answer.
struct PoseEstimate {
  Vec3 center = Vec3::Zero();        // the center the estimate was built around
  ad::Matrix offsets;                // M×3 key-point shifts (empty for the R,t head)
  RigidTransform transform;          // canonical -> scene
  Mesh posed_template;               // transform applied to the template mesh
  std::vector<Vec3> posed_keypoints; // transform applied to the key points
  std::size_t class_used = 0;
  std::vector<double> class_distribution;  // softmax scores, empty without a class head
  bool unique_fit = true;

  /// One-line JSON record: R row-major, t, class, frame index.
  std::string to_json_line(std::size_t frame_index) const;
};

struct SequenceFrame {
  ad::Matrix cloud;
  std::optional<FrameGroundTruth> gt;
};

struct FrameSequence {
  std::vector<SequenceFrame> frames;
  double fps = 10.0;
};

struct FitResult {
  RigidTransform transform;
  Mesh posed_mesh;
  std::vector<Vec3> posed_keypoints;
  bool unique = true;
};

/// Rigid projection of the offset prediction: Procrustes between the
/// canonical key points and (key points + center + offsets), then the
/// transform applied verbatim to the full-resolution template.
FitResult fit_template(const ad::Matrix& canonical_keypoints, const Vec3& center,
                       const ad::Matrix& offsets, const ObjectTemplate& tmpl);

/// Full single-frame pop-up: global encoding -> center -> local neighborhood
/// -> offsets -> rigid fit. `center_override` substitutes the center used
/// downstream (smoothed trajectories); the network's own center is still
/// regressed internally.
PoseEstimate popup_single(const ad::Matrix& cloud, std::size_t class_id,
                          const PopupNetwork& net, const ObjectTemplate& tmpl,
                          const std::optional<Vec3>& center_override = std::nullopt);

/// Per-axis Gaussian smoothing of a center trajectory. The kernel is
/// truncated at 4 sigma and renormalized over the valid window at the
/// boundaries, so constants pass through unchanged. sigma is in frames;
/// sigma <= 0 is the identity.
std::vector<Vec3> smooth_sequence(const std::vector<Vec3>& centers, double sigma);

/// Sequence class from per-frame distributions. Default: argmax per frame,
/// then majority; ties go to the larger summed score, then the lower id.
/// With max_score, the class with the largest score summed over frames wins.
std::size_t vote_class(const std::vector<std::vector<double>>& per_frame,
                       bool max_score = false);

struct SequenceOptions {
  double smoothing_sigma = 3.0;        // frames
  std::optional<std::size_t> class_id; // fixed class; otherwise voted
  bool vote_by_max_score = false;
};

/// Two-pass sequence pipeline: per-frame centers and class scores first,
/// then class voting, center smoothing, and a second pass that re-decodes
/// offsets around the smoothed centers and refits the template per frame.
std::vector<PoseEstimate> popup_sequence(const FrameSequence& seq, const PopupNetwork& net,
                                         const std::vector<ObjectTemplate>& templates,
                                         const SequenceOptions& options = {});

/// Uniform frame striding (first frame kept); the stride is the nearest
/// integer to source/target fps, at least 1.
FrameSequence downsample_sequence(const FrameSequence& seq, double target_fps);

}  // namespace popup

#endif  // POPUP_PIPELINE_HPP
