#include "popup/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "popup/rng.hpp"

namespace popup {

Vec3 PointCloud::centroid() const {
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  return c / static_cast<double>(points.size());
}

std::vector<Vec3> RigidTransform::apply(const std::vector<Vec3>& pts) const {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(R * p + t);
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.R = R.transpose();
  inv.t = -(R.transpose() * t);
  return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& inner) const {
  RigidTransform out;
  out.R = R * inner.R;
  out.t = R * inner.t + t;
  return out;
}

bool RigidTransform::is_valid(double tol) const {
  Mat3 err = R.transpose() * R - Mat3::Identity();
  return err.cwiseAbs().maxCoeff() <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

double Mesh::total_area() const {
  double area = 0.0;
  for (const auto& f : faces) {
    const Vec3& a = vertices[f[0]];
    const Vec3& b = vertices[f[1]];
    const Vec3& c = vertices[f[2]];
    area += 0.5 * (b - a).cross(c - a).norm();
  }
  return area;
}

std::vector<std::size_t> knn_indices(const PointCloud& cloud, const Vec3& query, std::size_t k) {
  if (cloud.empty()) throw GeometryError("knn_select: empty point cloud");
  const std::size_t n = cloud.size();
  if (k < 1) throw GeometryError("knn_select: k must be >= 1");
  if (k > n) k = n;  // clamp

  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    dist[i] = {(cloud.points[i] - query).squaredNorm(), i};
  }
  // pair comparison breaks distance ties by lower index
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
  return out;
}

PointCloud knn_select(const PointCloud& cloud, const Vec3& query, std::size_t k) {
  auto idx = knn_indices(cloud, query, k);
  PointCloud out;
  out.points.reserve(idx.size());
  for (auto i : idx) out.points.push_back(cloud.points[i]);
  return out;
}

std::size_t canonical_start_index(const PointCloud& cloud) {
  if (cloud.empty()) throw GeometryError("canonical_start_index: empty point cloud");
  std::size_t best = 0;
  for (std::size_t i = 1; i < cloud.size(); ++i) {
    const Vec3& a = cloud.points[i];
    const Vec3& b = cloud.points[best];
    if (a.x() < b.x() || (a.x() == b.x() && (a.y() < b.y() || (a.y() == b.y() && a.z() < b.z()))))
      best = i;
  }
  return best;
}

std::vector<std::size_t> farthest_point_sample_from(const PointCloud& cloud, std::size_t m,
                                                    std::size_t start_index) {
  const std::size_t n = cloud.size();
  if (m < 1 || m > n) throw GeometryError("farthest_point_sample: m out of range");
  if (start_index >= n) throw GeometryError("farthest_point_sample: start index out of range");

  std::vector<std::size_t> selected;
  selected.reserve(m);
  selected.push_back(start_index);

  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  std::size_t last = start_index;
  for (std::size_t round = 1; round < m; ++round) {
    double best_dist = -1.0;
    std::size_t best_idx = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = (cloud.points[i] - cloud.points[last]).squaredNorm();
      if (d < min_dist[i]) min_dist[i] = d;
      if (min_dist[i] > best_dist) {
        best_dist = min_dist[i];
        best_idx = i;
      }
    }
    selected.push_back(best_idx);
    last = best_idx;
  }
  return selected;
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t m,
                                               std::uint64_t seed) {
  if (cloud.empty()) throw GeometryError("farthest_point_sample: empty point cloud");
  Rng rng(seed);
  std::size_t start = static_cast<std::size_t>(rng.uniform_index(cloud.size()));
  return farthest_point_sample_from(cloud, m, start);
}

ProcrustesResult procrustes_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.size() != dst.size()) throw GeometryError("procrustes_align: size mismatch");
  if (src.size() < 3) throw GeometryError("procrustes_align: need at least 3 points");
  const std::size_t n = src.size();

  Vec3 src_mean = Vec3::Zero();
  Vec3 dst_mean = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    src_mean += src[i];
    dst_mean += dst[i];
  }
  src_mean /= static_cast<double>(n);
  dst_mean /= static_cast<double>(n);

  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    cov += (dst[i] - dst_mean) * (src[i] - src_mean).transpose();
  }

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU();
  Mat3 V = svd.matrixV();
  Mat3 S = Mat3::Identity();
  if ((U * V.transpose()).determinant() < 0.0) S(2, 2) = -1.0;  // reflection correction

  ProcrustesResult result;
  result.transform.R = U * S * V.transpose();
  result.transform.t = dst_mean - result.transform.R * src_mean;

  // rank of the centered covariance decides uniqueness; collinear or
  // coincident sources leave a free rotation axis
  const auto& sv = svd.singularValues();
  double scale = std::max(sv(0), 1e-30);
  result.unique = sv(1) / scale > 1e-9;
  return result;
}

double chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) throw GeometryError("chamfer_distance: empty point set");
  auto directed = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double total = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
      total += std::sqrt(best);
    }
    return total / static_cast<double>(from.size());
  };
  return directed(a, b) + directed(b, a);
}

double v2v_error(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.size() != b.size()) throw GeometryError("v2v_error: count mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]).squaredNorm();
  return std::sqrt(sum);
}

std::vector<Vec3> sample_surface(const Mesh& mesh, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw GeometryError("sample_surface: n must be >= 1");
  if (mesh.faces.empty()) throw GeometryError("sample_surface: mesh has no faces");

  std::vector<double> cumulative(mesh.faces.size());
  double area = 0.0;
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    const auto& f = mesh.faces[i];
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    area += 0.5 * (b - a).cross(c - a).norm();
    cumulative[i] = area;
  }
  if (area <= 0.0) throw GeometryError("sample_surface: zero-area mesh");

  Rng rng(seed);
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform() * area;
    auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
    std::size_t fi = static_cast<std::size_t>(it - cumulative.begin());
    if (fi >= mesh.faces.size()) fi = mesh.faces.size() - 1;
    const auto& f = mesh.faces[fi];

    double r1 = std::sqrt(rng.uniform());
    double r2 = rng.uniform();
    double w0 = 1.0 - r1;
    double w1 = r1 * (1.0 - r2);
    double w2 = r1 * r2;
    out.push_back(w0 * mesh.vertices[f[0]] + w1 * mesh.vertices[f[1]] + w2 * mesh.vertices[f[2]]);
  }
  return out;
}

Vec3 coordinate_median(const PointCloud& cloud) {
  if (cloud.empty()) throw GeometryError("coordinate_median: empty point cloud");
  const std::size_t n = cloud.size();
  // even counts take the lower-middle element
  const std::size_t mid = (n - 1) / 2;
  Vec3 med;
  std::vector<double> axis(n);
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < n; ++i) axis[i] = cloud.points[i](a);
    std::nth_element(axis.begin(), axis.begin() + static_cast<std::ptrdiff_t>(mid), axis.end());
    med(a) = axis[mid];
  }
  return med;
}

}  // namespace popup
