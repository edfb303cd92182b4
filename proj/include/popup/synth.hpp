#ifndef POPUP_SYNTH_HPP
#define POPUP_SYNTH_HPP

#include <filesystem>

#include "popup/dataset.hpp"

namespace popup {

/// Synthetic desk-scale dataset: a procedural articulated figure (per-limb
/// point shells with fixed point correspondence across frames) interacting
/// with one of four object classes. Classes induce distinct hand/body
/// configurations so that class, center and pose are all learnable from the
/// body alone.
struct SynthConfig {
  std::size_t sequences = 40;
  std::size_t frames_per_sequence = 60;
  std::size_t points_per_frame = 9000;
  std::size_t keypoint_count = 1500;
  double fps = 10.0;
  double train_fraction = 0.7;
  double val_fraction = 0.1;
  double noise_sigma = 0.002;  // per-point measurement jitter (m)
  bool write_ply = true;

  std::string to_json_string() const;
  static SynthConfig from_json_string(const std::string& s);
};

/// Fixed class set. box/board are held with two hands, stick/ball with one;
/// the ground-truth object center stays within the interaction distance of
/// its anchor hand cluster by construction.
enum class SynthClass : std::size_t { Box = 0, Stick = 1, Ball = 2, Board = 3 };
inline constexpr std::size_t kSynthClassCount = 4;
inline constexpr double kHandHeldMaxDist = 0.05;   // m, from the holding hand
inline constexpr double kTwoHandedMaxDist = 0.10;  // m, from the hand midpoint

const char* synth_class_name(std::size_t class_id);
bool synth_class_two_handed(std::size_t class_id);

/// Canonical template mesh for a class, key points centered at the origin.
ObjectTemplate make_synth_template(std::size_t class_id, std::size_t keypoint_count,
                                   std::uint64_t seed);

/// One generated frame before serialization.
struct SynthFrame {
  ad::Matrix cloud;
  FrameGroundTruth gt;
};

/// Generates one sequence deterministically from (seed, sequence_index).
std::vector<SynthFrame> generate_sequence(const SynthConfig& config, std::size_t class_id,
                                          std::uint64_t seed, std::size_t sequence_index);

/// Writes the full dataset (sequences, templates, manifest) under out_dir
/// and returns the manifest. Same seed -> byte-identical output.
DatasetManifest generate_synthetic(const SynthConfig& config, std::uint64_t seed,
                                   const std::filesystem::path& out_dir);

}  // namespace popup

#endif  // POPUP_SYNTH_HPP
