#include "popup/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace popup::io {

namespace {

void append_float_le(std::string& buf, float v) {
  char bytes[4];
  std::memcpy(bytes, &v, 4);
  buf.append(bytes, 4);
}

float read_float_le(const char* p) {
  float v;
  std::memcpy(&v, p, 4);
  return v;
}

double read_double_le(const char* p) {
  double v;
  std::memcpy(&v, p, 8);
  return v;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_ply(const std::filesystem::path& path, const std::vector<Vec3>& points,
               PlyFormat format, const std::vector<double>* scalars,
               const std::string& scalar_name) {
  if (scalars && scalars->size() != points.size())
    throw IoError("write_ply: scalar count mismatch");

  std::ostringstream header;
  header << "ply\n";
  header << "format "
         << (format == PlyFormat::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n";
  header << "element vertex " << points.size() << "\n";
  header << "property float x\nproperty float y\nproperty float z\n";
  if (scalars) header << "property float " << scalar_name << "\n";
  header << "end_header\n";

  std::string body;
  if (format == PlyFormat::Ascii) {
    std::ostringstream ss;
    ss.precision(9);
    for (std::size_t i = 0; i < points.size(); ++i) {
      ss << points[i].x() << " " << points[i].y() << " " << points[i].z();
      if (scalars) ss << " " << (*scalars)[i];
      ss << "\n";
    }
    body = ss.str();
  } else {
    body.reserve(points.size() * (scalars ? 16 : 12));
    for (std::size_t i = 0; i < points.size(); ++i) {
      append_float_le(body, static_cast<float>(points[i].x()));
      append_float_le(body, static_cast<float>(points[i].y()));
      append_float_le(body, static_cast<float>(points[i].z()));
      if (scalars) append_float_le(body, static_cast<float>((*scalars)[i]));
    }
  }
  write_file_atomic(path, header.str() + body);
}

std::vector<Vec3> read_ply(const std::filesystem::path& path) {
  std::string raw = slurp(path);
  std::istringstream in(raw);
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply")
    throw IoError("not a PLY file: " + path.string());

  bool binary = false;
  std::size_t vertex_count = 0;
  struct Prop {
    std::string type, name;
  };
  std::vector<Prop> props;
  bool in_vertex_element = false;

  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian")
        binary = true;
      else if (fmt != "ascii")
        throw IoError("unsupported PLY format: " + fmt);
    } else if (tok == "element") {
      std::string name;
      std::size_t count;
      ls >> name >> count;
      in_vertex_element = (name == "vertex");
      if (in_vertex_element) vertex_count = count;
      else if (count > 0)
        throw IoError("unsupported non-vertex PLY element: " + name);
    } else if (tok == "property" && in_vertex_element) {
      Prop p;
      ls >> p.type >> p.name;
      props.push_back(p);
    } else if (tok == "end_header") {
      break;
    }
  }

  int ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < props.size(); ++i) {
    if (props[i].name == "x") ix = static_cast<int>(i);
    if (props[i].name == "y") iy = static_cast<int>(i);
    if (props[i].name == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw IoError("PLY missing x/y/z: " + path.string());

  std::vector<Vec3> points;
  points.reserve(vertex_count);
  if (binary) {
    std::size_t stride = 0;
    std::vector<std::size_t> offsets(props.size());
    for (std::size_t i = 0; i < props.size(); ++i) {
      offsets[i] = stride;
      if (props[i].type == "float" || props[i].type == "float32")
        stride += 4;
      else if (props[i].type == "double" || props[i].type == "float64")
        stride += 8;
      else
        throw IoError("unsupported PLY property type: " + props[i].type);
    }
    std::size_t data_start = static_cast<std::size_t>(in.tellg());
    if (raw.size() < data_start + vertex_count * stride)
      throw IoError("truncated PLY data: " + path.string());
    auto get = [&](std::size_t row, int prop) {
      const char* p = raw.data() + data_start + row * stride + offsets[static_cast<std::size_t>(prop)];
      return props[static_cast<std::size_t>(prop)].type[0] == 'd' ||
                     props[static_cast<std::size_t>(prop)].type == "float64"
                 ? read_double_le(p)
                 : static_cast<double>(read_float_le(p));
    };
    for (std::size_t r = 0; r < vertex_count; ++r)
      points.emplace_back(get(r, ix), get(r, iy), get(r, iz));
  } else {
    std::vector<double> row(props.size());
    for (std::size_t r = 0; r < vertex_count; ++r) {
      for (auto& v : row)
        if (!(in >> v)) throw IoError("truncated ASCII PLY: " + path.string());
      points.emplace_back(row[static_cast<std::size_t>(ix)], row[static_cast<std::size_t>(iy)],
                          row[static_cast<std::size_t>(iz)]);
    }
  }
  return points;
}

void write_xyz(const std::filesystem::path& path, const std::vector<Vec3>& points) {
  std::ostringstream ss;
  ss.precision(17);
  for (const auto& p : points) ss << p.x() << " " << p.y() << " " << p.z() << "\n";
  write_file_atomic(path, ss.str());
}

std::vector<Vec3> read_xyz(const std::filesystem::path& path) {
  std::istringstream in(slurp(path));
  std::vector<Vec3> points;
  double x, y, z;
  while (in >> x >> y >> z) points.emplace_back(x, y, z);
  return points;
}

std::vector<Vec3> read_points(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  if (ext == ".ply") return read_ply(path);
  if (ext == ".xyz" || ext == ".txt") return read_xyz(path);
  throw IoError("unsupported point format: " + path.string());
}

void write_obj(const std::filesystem::path& path, const Mesh& mesh) {
  std::ostringstream ss;
  ss.precision(12);
  for (const auto& v : mesh.vertices) ss << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& f : mesh.faces)
    ss << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
  write_file_atomic(path, ss.str());
}

Mesh read_obj(const std::filesystem::path& path) {
  std::istringstream in(slurp(path));
  Mesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw IoError("bad vertex line in " + path.string());
      mesh.vertices.emplace_back(x, y, z);
    } else if (tok == "f") {
      std::vector<std::uint32_t> idx;
      std::string ref;
      while (ls >> ref) {
        // face refs may carry /vt/vn parts; the position index is first
        std::size_t slash = ref.find('/');
        long v = std::stol(slash == std::string::npos ? ref : ref.substr(0, slash));
        if (v < 0) v = static_cast<long>(mesh.vertices.size()) + v + 1;
        if (v < 1 || static_cast<std::size_t>(v) > mesh.vertices.size())
          throw IoError("face index out of range in " + path.string());
        idx.push_back(static_cast<std::uint32_t>(v - 1));
      }
      if (idx.size() < 3) throw IoError("degenerate face in " + path.string());
      for (std::size_t i = 1; i + 1 < idx.size(); ++i)
        mesh.faces.push_back({idx[0], idx[i], idx[i + 1]});
    }
  }
  return mesh;
}

}  // namespace popup::io
