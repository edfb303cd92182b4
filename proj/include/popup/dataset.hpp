#ifndef POPUP_DATASET_HPP
#define POPUP_DATASET_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "popup/model.hpp"

namespace popup {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FrameGroundTruth {
  RigidTransform pose;  // canonical template -> world
  Vec3 center;          // centroid of the posed key points
};

struct SequenceMeta {
  std::string id;
  std::size_t class_id = 0;
  std::string split;  // train / val / test
  std::size_t frame_count = 0;
  double fps = 10.0;
  std::string dir;  // relative to the manifest
  std::uint64_t raw_bytes = 0;
  std::uint64_t raw_hash = 0;  // FNV-1a of points.raw
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::size_t points_per_frame = 9000;
  std::size_t keypoint_count = 1500;
  std::uint64_t seed = 0;
  std::vector<SequenceMeta> sequences;

  std::string to_json_string() const;
  static DatasetManifest from_json_string(const std::string& s);
};

struct LoadedSequence {
  SequenceMeta meta;
  std::vector<ad::Matrix> clouds;  // frame_count × (N×3)
  std::vector<FrameGroundTruth> gt;
};

/// Dataset handle: manifest plus templates eagerly loaded, frames lazily
/// per sequence. Load-time validation covers split disjointness, sidecar
/// sizes and hashes.
class Dataset {
 public:
  static Dataset load(const std::filesystem::path& manifest_path);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::vector<ObjectTemplate>& templates() const { return templates_; }
  const ObjectTemplate& template_for_class(std::size_t class_id) const;
  const std::filesystem::path& root() const { return root_; }

  std::vector<std::size_t> sequence_indices(const std::string& split) const;
  LoadedSequence load_sequence(std::size_t index) const;

  /// Ground-truth key points of a frame: pose applied to the template.
  std::vector<Vec3> gt_keypoints(const LoadedSequence& seq, std::size_t frame) const;

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
  std::vector<ObjectTemplate> templates_;
};

/// Persists one sequence under root/dir: points.raw (little-endian f32),
/// per-frame PLY files and gt.json. Returns meta with byte count and hash.
SequenceMeta write_sequence(const std::filesystem::path& root, const SequenceMeta& meta,
                            const std::vector<ad::Matrix>& clouds,
                            const std::vector<FrameGroundTruth>& gt, bool write_ply = true);

void write_manifest(const std::filesystem::path& root, const DatasetManifest& manifest,
                    const std::vector<ObjectTemplate>& templates);

std::uint64_t fnv1a_hash_bytes(const char* data, std::size_t n);

}  // namespace popup

#endif  // POPUP_DATASET_HPP
