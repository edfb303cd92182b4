#include "popup/dataset.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "popup/io.hpp"

namespace popup {

namespace {

nlohmann::json seq_to_json(const SequenceMeta& s) {
  return {{"id", s.id},        {"class", s.class_id},   {"split", s.split},
          {"frames", s.frame_count}, {"fps", s.fps},    {"dir", s.dir},
          {"raw_bytes", s.raw_bytes}, {"raw_hash", s.raw_hash}};
}

SequenceMeta seq_from_json(const nlohmann::json& j) {
  SequenceMeta s;
  j.at("id").get_to(s.id);
  j.at("class").get_to(s.class_id);
  j.at("split").get_to(s.split);
  j.at("frames").get_to(s.frame_count);
  j.at("fps").get_to(s.fps);
  j.at("dir").get_to(s.dir);
  j.at("raw_bytes").get_to(s.raw_bytes);
  j.at("raw_hash").get_to(s.raw_hash);
  return s;
}

std::string slurp_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::uint64_t fnv1a_hash_bytes(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string DatasetManifest::to_json_string() const {
  nlohmann::json j;
  j["classes"] = classes;
  j["points_per_frame"] = points_per_frame;
  j["keypoint_count"] = keypoint_count;
  j["seed"] = seed;
  auto& seqs = j["sequences"] = nlohmann::json::array();
  for (const auto& s : sequences) seqs.push_back(seq_to_json(s));
  return j.dump(2);
}

DatasetManifest DatasetManifest::from_json_string(const std::string& s) {
  auto j = nlohmann::json::parse(s);
  DatasetManifest m;
  j.at("classes").get_to(m.classes);
  j.at("points_per_frame").get_to(m.points_per_frame);
  j.at("keypoint_count").get_to(m.keypoint_count);
  j.at("seed").get_to(m.seed);
  for (const auto& sj : j.at("sequences")) m.sequences.push_back(seq_from_json(sj));
  return m;
}

SequenceMeta write_sequence(const std::filesystem::path& root, const SequenceMeta& meta,
                            const std::vector<ad::Matrix>& clouds,
                            const std::vector<FrameGroundTruth>& gt, bool write_ply) {
  if (clouds.size() != gt.size()) throw DataError("write_sequence: frame/gt count mismatch");
  auto dir = root / meta.dir;
  std::filesystem::create_directories(dir);

  std::string raw;
  raw.reserve(clouds.size() * (clouds.empty() ? 0 : clouds[0].size()) * 4);
  for (const auto& cloud : clouds) {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      float v = static_cast<float>(cloud.at(i));
      char bytes[4];
      std::memcpy(bytes, &v, 4);
      raw.append(bytes, 4);
    }
  }
  io::write_file_atomic(dir / "points.raw", raw);

  nlohmann::json gj;
  auto& frames = gj["frames"] = nlohmann::json::array();
  for (const auto& g : gt) {
    std::vector<double> r(9);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r[static_cast<std::size_t>(3 * i + j)] = g.pose.R(i, j);
    frames.push_back({{"R", r},
                      {"t", {g.pose.t.x(), g.pose.t.y(), g.pose.t.z()}},
                      {"center", {g.center.x(), g.center.y(), g.center.z()}}});
  }
  io::write_file_atomic(dir / "gt.json", gj.dump());

  if (write_ply) {
    for (std::size_t f = 0; f < clouds.size(); ++f) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%05zu.ply", f);
      io::write_ply(dir / name, matrix_to_points(clouds[f]));
    }
  }

  SequenceMeta out = meta;
  out.frame_count = clouds.size();
  out.raw_bytes = raw.size();
  out.raw_hash = fnv1a_hash_bytes(raw.data(), raw.size());
  return out;
}

void write_manifest(const std::filesystem::path& root, const DatasetManifest& manifest,
                    const std::vector<ObjectTemplate>& templates) {
  std::filesystem::create_directories(root / "templates");
  for (const auto& t : templates) {
    io::write_obj(root / "templates" / (t.name + ".obj"), t.mesh);
    io::write_ply(root / "templates" / (t.name + "_keypoints.ply"), t.keypoints);
  }
  io::write_file_atomic(root / "manifest.json", manifest.to_json_string());
}

Dataset Dataset::load(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.root_ = manifest_path.parent_path();
  ds.manifest_ = DatasetManifest::from_json_string(slurp_binary(manifest_path));

  // sequence ids must be unique and belong to exactly one split
  std::set<std::string> ids;
  for (const auto& s : ds.manifest_.sequences) {
    if (!ids.insert(s.id).second)
      throw DataError("manifest: sequence '" + s.id + "' appears in more than one split");
    if (s.split != "train" && s.split != "val" && s.split != "test")
      throw DataError("manifest: unknown split '" + s.split + "' for sequence " + s.id);
  }

  for (std::size_t c = 0; c < ds.manifest_.classes.size(); ++c) {
    ObjectTemplate t;
    t.class_id = c;
    t.name = ds.manifest_.classes[c];
    t.mesh = io::read_obj(ds.root_ / "templates" / (t.name + ".obj"));
    t.keypoints = io::read_ply(ds.root_ / "templates" / (t.name + "_keypoints.ply"));
    if (t.keypoints.size() != ds.manifest_.keypoint_count)
      throw DataError("template " + t.name + ": keypoint count mismatch");
    ds.templates_.push_back(std::move(t));
  }
  return ds;
}

const ObjectTemplate& Dataset::template_for_class(std::size_t class_id) const {
  if (class_id >= templates_.size()) throw DataError("template_for_class: bad class id");
  return templates_[class_id];
}

std::vector<std::size_t> Dataset::sequence_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest_.sequences.size(); ++i)
    if (manifest_.sequences[i].split == split) out.push_back(i);
  return out;
}

LoadedSequence Dataset::load_sequence(std::size_t index) const {
  if (index >= manifest_.sequences.size()) throw DataError("load_sequence: index out of range");
  const auto& meta = manifest_.sequences[index];
  auto raw_path = root_ / meta.dir / "points.raw";
  std::string raw = slurp_binary(raw_path);

  if (raw.size() != meta.raw_bytes)
    throw DataError("size mismatch in " + raw_path.string() + ": expected " +
                    std::to_string(meta.raw_bytes) + " bytes, got " + std::to_string(raw.size()));
  if (fnv1a_hash_bytes(raw.data(), raw.size()) != meta.raw_hash)
    throw DataError("checksum mismatch in " + raw_path.string());

  const std::size_t n = manifest_.points_per_frame;
  if (raw.size() != meta.frame_count * n * 3 * 4)
    throw DataError("frame count mismatch in " + raw_path.string());

  LoadedSequence seq;
  seq.meta = meta;
  seq.clouds.reserve(meta.frame_count);
  const char* p = raw.data();
  for (std::size_t f = 0; f < meta.frame_count; ++f) {
    ad::Matrix cloud(n, 3);
    for (std::size_t i = 0; i < n * 3; ++i) {
      float v;
      std::memcpy(&v, p, 4);
      p += 4;
      cloud.at(i) = static_cast<double>(v);
    }
    seq.clouds.push_back(std::move(cloud));
  }

  auto gj = nlohmann::json::parse(slurp_binary(root_ / meta.dir / "gt.json"));
  for (const auto& fj : gj.at("frames")) {
    FrameGroundTruth g;
    auto r = fj.at("R").get<std::vector<double>>();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) g.pose.R(i, j) = r[static_cast<std::size_t>(3 * i + j)];
    auto t = fj.at("t").get<std::vector<double>>();
    g.pose.t = Vec3(t[0], t[1], t[2]);
    auto c = fj.at("center").get<std::vector<double>>();
    g.center = Vec3(c[0], c[1], c[2]);
    seq.gt.push_back(g);
  }
  if (seq.gt.size() != meta.frame_count)
    throw DataError("gt frame count mismatch in " + (root_ / meta.dir / "gt.json").string());
  return seq;
}

std::vector<Vec3> Dataset::gt_keypoints(const LoadedSequence& seq, std::size_t frame) const {
  const auto& tmpl = template_for_class(seq.meta.class_id);
  return seq.gt.at(frame).pose.apply(tmpl.keypoints);
}

}  // namespace popup
