#ifndef POPUP_GEOMETRY_HPP
#define POPUP_GEOMETRY_HPP

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace popup {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Unordered set of 3D points (meters).
struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  Vec3 centroid() const;
};

/// Rigid transform x -> R*x + t with a proper rotation.
struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  std::vector<Vec3> apply(const std::vector<Vec3>& pts) const;
  RigidTransform inverse() const;
  RigidTransform compose(const RigidTransform& inner) const;  // this ∘ inner

  // RᵀR = I and det(R) = +1, both within tol.
  bool is_valid(double tol = 1e-9) const;
};

/// Triangle mesh. Faces index into vertices.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;

  double total_area() const;
};

struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Result of a Procrustes fit; non-unique solutions are flagged, not thrown.
struct ProcrustesResult {
  RigidTransform transform;
  bool unique = true;
};

/// k nearest points to `query` by Euclidean distance, closest first.
/// Ties broken by lower original index. k is clamped to the cloud size.
std::vector<std::size_t> knn_indices(const PointCloud& cloud, const Vec3& query, std::size_t k);
PointCloud knn_select(const PointCloud& cloud, const Vec3& query, std::size_t k);

/// Greedy max-min (farthest point) sampling of m indices.
/// The start index is drawn from `seed`; pass start_hint to pin it instead.
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t m,
                                               std::uint64_t seed);
std::vector<std::size_t> farthest_point_sample_from(const PointCloud& cloud, std::size_t m,
                                                    std::size_t start_index);

/// Order-canonical start index: the point with lexicographically smallest
/// (x, y, z). Invariant under permutation of the input points.
std::size_t canonical_start_index(const PointCloud& cloud);

/// Least-squares rigid fit: argmin_{R,t} Σ‖R·srcᵢ + t − dstᵢ‖².
/// Kabsch via SVD of the centered cross-covariance, det sign corrected so
/// the result is always a proper rotation. Degenerate (rank < 2) source
/// configurations produce a best-effort fit with unique = false.
ProcrustesResult procrustes_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);

/// Bi-directional Chamfer distance: mean nearest-neighbor distance in each
/// direction, summed. Each direction normalized by its own cardinality.
double chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

/// Frobenius norm of the difference between two corresponding point sets.
double v2v_error(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

/// Area-weighted uniform sampling of n points on a mesh surface.
std::vector<Vec3> sample_surface(const Mesh& mesh, std::size_t n, std::uint64_t seed);

/// Componentwise median; even counts take the lower-middle element.
Vec3 coordinate_median(const PointCloud& cloud);

}  // namespace popup

#endif  // POPUP_GEOMETRY_HPP
