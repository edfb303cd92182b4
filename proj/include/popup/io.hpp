#ifndef POPUP_IO_HPP
#define POPUP_IO_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "popup/geometry.hpp"

namespace popup::io {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class PlyFormat { BinaryLittleEndian, Ascii };

/// Writes a point cloud as PLY. An optional per-point scalar is stored as a
/// float property named `scalar_name` (used for saliency score export).
void write_ply(const std::filesystem::path& path, const std::vector<Vec3>& points,
               PlyFormat format = PlyFormat::BinaryLittleEndian,
               const std::vector<double>* scalars = nullptr,
               const std::string& scalar_name = "scalar");

std::vector<Vec3> read_ply(const std::filesystem::path& path);

/// Plain whitespace-separated "x y z" per line.
void write_xyz(const std::filesystem::path& path, const std::vector<Vec3>& points);
std::vector<Vec3> read_xyz(const std::filesystem::path& path);

/// Loads any supported point format by extension (.ply, .xyz).
std::vector<Vec3> read_points(const std::filesystem::path& path);

/// OBJ, triangles only on write; polygons fan-triangulated on read.
void write_obj(const std::filesystem::path& path, const Mesh& mesh);
Mesh read_obj(const std::filesystem::path& path);

/// Atomic write: contents go to a temp file which is then renamed over path.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace popup::io

#endif  // POPUP_IO_HPP
