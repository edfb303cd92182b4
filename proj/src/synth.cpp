#include "popup/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "popup/rng.hpp"

namespace popup {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

// ---- template meshes ----

Mesh make_cuboid(double sx, double sy, double sz) {
  Mesh m;
  double hx = sx / 2, hy = sy / 2, hz = sz / 2;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back((i & 1) ? hx : -hx, (i & 2) ? hy : -hy, (i & 4) ? hz : -hz);
  }
  auto quad = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t d) {
    m.faces.push_back({a, b, c});
    m.faces.push_back({a, c, d});
  };
  quad(0, 1, 3, 2);  // z-
  quad(4, 6, 7, 5);  // z+
  quad(0, 4, 5, 1);  // y-
  quad(2, 3, 7, 6);  // y+
  quad(0, 2, 6, 4);  // x-
  quad(1, 5, 7, 3);  // x+
  return m;
}

Mesh make_icosphere(double radius, int subdivisions) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  Mesh m;
  m.vertices = {{-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
                {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
                {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1}};
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::vector<std::array<std::uint32_t, 3>> faces;
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoint;
    auto mid = [&](std::uint32_t a, std::uint32_t b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      m.vertices.push_back((m.vertices[a] + m.vertices[b]) / 2.0);
      std::uint32_t idx = static_cast<std::uint32_t>(m.vertices.size() - 1);
      midpoint.emplace(key, idx);
      return idx;
    };
    for (const auto& f : m.faces) {
      std::uint32_t ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      faces.push_back({f[0], ab, ca});
      faces.push_back({f[1], bc, ab});
      faces.push_back({f[2], ca, bc});
      faces.push_back({ab, bc, ca});
    }
    m.faces = std::move(faces);
  }
  for (auto& v : m.vertices) v = v.normalized() * radius;
  return m;
}

// ---- articulated figure ----

struct Segment {
  int joint_a;
  int joint_b;
  double radius;
  double weight;  // share of the point budget
};

// joint indices
enum Joint {
  kPelvis = 0,
  kChest,
  kHeadTop,
  kShoulderL,
  kShoulderR,
  kElbowL,
  kElbowR,
  kHandL,
  kHandR,
  kHipL,
  kHipR,
  kKneeL,
  kKneeR,
  kFootL,
  kFootR,
  kJointCount
};

const std::vector<Segment>& body_segments() {
  static const std::vector<Segment> segments = {
      {kPelvis, kChest, 0.11, 0.24},    {kChest, kHeadTop, 0.08, 0.10},
      {kShoulderL, kElbowL, 0.045, 0.07}, {kElbowL, kHandL, 0.04, 0.07},
      {kShoulderR, kElbowR, 0.045, 0.07}, {kElbowR, kHandR, 0.04, 0.07},
      {kHipL, kKneeL, 0.06, 0.095},      {kKneeL, kFootL, 0.05, 0.095},
      {kHipR, kKneeR, 0.06, 0.095},      {kKneeR, kFootR, 0.05, 0.095},
  };
  return segments;
}

/// Fixed per-point attachment: segment, fraction along it, radial offset.
struct BodyPointTemplate {
  std::vector<std::size_t> segment;
  std::vector<double> u;
  std::vector<Vec3> offset;
};

BodyPointTemplate make_body_template(std::size_t n_points, Rng& rng) {
  const auto& segs = body_segments();
  BodyPointTemplate t;
  t.segment.reserve(n_points);
  t.u.reserve(n_points);
  t.offset.reserve(n_points);
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    std::size_t count = s + 1 == segs.size()
                            ? n_points - assigned
                            : static_cast<std::size_t>(std::floor(segs[s].weight *
                                                                  static_cast<double>(n_points)));
    for (std::size_t i = 0; i < count; ++i) {
      t.segment.push_back(s);
      t.u.push_back(rng.uniform());
      double r = segs[s].radius;
      t.offset.emplace_back(rng.normal() * r, rng.normal() * r * 0.4, rng.normal() * r);
    }
    assigned += count;
  }
  return t;
}

/// Smooth scalar animation channel.
struct Channel {
  double base, amp, freq, phase;
  double at(double t) const { return base + amp * std::sin(kTau * freq * t + phase); }
};

Channel random_channel(Rng& rng, double base, double amp_max, double freq_max) {
  return {base, rng.uniform(0.3, 1.0) * amp_max, rng.uniform(0.1, 1.0) * freq_max,
          rng.uniform(0.0, kTau)};
}

struct SequenceScript {
  Vec3 base;  // where in the room the sequence takes place
  double yaw0, yaw_rate;
  Channel sway_x, sway_y, sway_z;
  Channel hand_lx, hand_ly, hand_lz;
  Channel hand_rx, hand_ry, hand_rz;
  Channel walk;
  Channel grip;  // hand-cluster twist that carries the object orientation
};

SequenceScript make_script(std::size_t class_id, Rng& rng) {
  SequenceScript s;
  s.base = Vec3(rng.uniform(-1.5, 1.5), 0.0, rng.uniform(-1.5, 1.5));
  s.yaw0 = rng.uniform(0.0, kTau);
  s.yaw_rate = rng.uniform(-0.15, 0.15);  // rad/s
  s.sway_x = random_channel(rng, 0.0, 0.05, 0.4);
  s.sway_y = random_channel(rng, 0.0, 0.02, 0.5);
  s.sway_z = random_channel(rng, 0.0, 0.05, 0.4);
  s.walk = random_channel(rng, 0.0, 1.0, 0.6);
  s.grip = random_channel(rng, 0.0, 1.2, 0.5);

  // class-conditioned hand trajectories (body frame, origin at the feet)
  Vec3 base_l, base_r;
  double amp;
  switch (static_cast<SynthClass>(class_id)) {
    case SynthClass::Box:  // two hands close together in front of the chest
      base_l = {-0.13, 1.08, 0.34};
      base_r = {0.13, 1.08, 0.34};
      amp = 0.07;
      break;
    case SynthClass::Stick:  // one extended arm, the other at rest
      base_l = {-0.24, 0.85, 0.02};
      base_r = {0.28, 1.02, 0.46};
      amp = 0.10;
      break;
    case SynthClass::Ball:  // one hand raised above shoulder height
      base_l = {-0.24, 0.86, 0.04};
      base_r = {0.30, 1.52, 0.18};
      amp = 0.08;
      break;
    case SynthClass::Board:  // wide two-handed carry
      base_l = {-0.42, 1.18, 0.26};
      base_r = {0.42, 1.18, 0.26};
      amp = 0.06;
      break;
    default:
      throw DataError("unknown synthetic class");
  }
  s.hand_lx = random_channel(rng, base_l.x(), amp, 0.5);
  s.hand_ly = random_channel(rng, base_l.y(), amp, 0.5);
  s.hand_lz = random_channel(rng, base_l.z(), amp, 0.5);
  s.hand_rx = random_channel(rng, base_r.x(), amp, 0.5);
  s.hand_ry = random_channel(rng, base_r.y(), amp, 0.5);
  s.hand_rz = random_channel(rng, base_r.z(), amp, 0.5);
  return s;
}

Mat3 yaw_rotation(double yaw) {
  Mat3 r;
  r << std::cos(yaw), 0, std::sin(yaw), 0, 1, 0, -std::sin(yaw), 0, std::cos(yaw);
  return r;
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

struct FramePose {
  std::array<Vec3, kJointCount> joints;  // world frame
  RigidTransform object;                 // canonical -> world
  Vec3 anchor;                           // hand cluster the object follows
};

FramePose pose_at(const SequenceScript& script, std::size_t class_id, double t) {
  // body frame first
  std::array<Vec3, kJointCount> j;
  Vec3 sway(script.sway_x.at(t), script.sway_y.at(t), script.sway_z.at(t));
  j[kPelvis] = Vec3(0, 0.95, 0) + sway;
  j[kChest] = j[kPelvis] + Vec3(0, 0.50, 0);
  j[kHeadTop] = j[kChest] + Vec3(0, 0.30, 0.04 * std::sin(script.walk.at(t)));
  j[kShoulderL] = j[kChest] + Vec3(-0.22, -0.02, 0);
  j[kShoulderR] = j[kChest] + Vec3(0.22, -0.02, 0);
  j[kHandL] = Vec3(script.hand_lx.at(t), script.hand_ly.at(t), script.hand_lz.at(t)) + sway;
  j[kHandR] = Vec3(script.hand_rx.at(t), script.hand_ry.at(t), script.hand_rz.at(t)) + sway;
  // the grip twist swings the hand cluster about the vertical axis; the
  // object frame follows the hands, so the twist is readable only from the
  // hand/forearm geometry, not from the overall body posture
  bool two_handed = synth_class_two_handed(class_id);
  Mat3 r_grip = axis_angle(Vec3(0, 1, 0), script.grip.at(t));
  if (two_handed) {
    Vec3 mid = (j[kHandL] + j[kHandR]) / 2.0;
    j[kHandL] = mid + r_grip * (j[kHandL] - mid);
    j[kHandR] = mid + r_grip * (j[kHandR] - mid);
  }
  auto elbow = [](const Vec3& shoulder, const Vec3& hand) {
    Vec3 mid = (shoulder + hand) / 2.0;
    Vec3 dir = (hand - shoulder).normalized();
    Vec3 bend = dir.cross(Vec3(0, 1, 0));
    if (bend.norm() < 1e-6) bend = Vec3(0, 0, 1);
    return Vec3(mid + bend.normalized() * 0.05 - Vec3(0, 0.03, 0));
  };
  j[kElbowL] = elbow(j[kShoulderL], j[kHandL]);
  j[kElbowR] = elbow(j[kShoulderR], j[kHandR]);
  // one-handed grip: swing the forearm about the elbow instead
  if (!two_handed) j[kHandR] = j[kElbowR] + r_grip * (j[kHandR] - j[kElbowR]);
  double step = 0.06 * std::sin(script.walk.at(t) * kTau * 0.2);
  j[kHipL] = j[kPelvis] + Vec3(-0.10, -0.02, 0);
  j[kHipR] = j[kPelvis] + Vec3(0.10, -0.02, 0);
  j[kFootL] = Vec3(-0.12, 0.03, step) + Vec3(sway.x(), 0, sway.z()) * 0.3;
  j[kFootR] = Vec3(0.12, 0.03, -step) + Vec3(sway.x(), 0, sway.z()) * 0.3;
  j[kKneeL] = (j[kHipL] + j[kFootL]) / 2.0 + Vec3(0, 0, 0.04);
  j[kKneeR] = (j[kHipR] + j[kFootR]) / 2.0 + Vec3(0, 0, 0.04);

  // object pose in the body frame
  Vec3 anchor, axis_x;
  double anchor_offset;
  if (two_handed) {
    anchor = (j[kHandL] + j[kHandR]) / 2.0;
    axis_x = (j[kHandR] - j[kHandL]).normalized();
    anchor_offset = 0.06;  // stays within the two-handed interaction distance
  } else {
    anchor = j[kHandR];
    axis_x = (j[kHandR] - j[kElbowR]).normalized();
    anchor_offset = 0.03;  // within 5 cm of the holding hand
  }
  Vec3 axis_z = axis_x.cross(Vec3(0, 1, 0));
  if (axis_z.norm() < 1e-6) axis_z = Vec3(0, 0, 1);
  axis_z.normalize();
  Vec3 axis_y = axis_z.cross(axis_x);

  Mat3 r_obj;
  r_obj.col(0) = axis_x;
  r_obj.col(1) = axis_y;
  r_obj.col(2) = axis_z;

  RigidTransform obj;
  obj.R = r_obj;
  obj.t = anchor + axis_y * anchor_offset;

  // whole scene rotated by the sequence yaw
  double yaw = script.yaw0 + script.yaw_rate * t;
  Mat3 r_yaw = yaw_rotation(yaw);
  FramePose pose;
  for (int k = 0; k < kJointCount; ++k)
    pose.joints[static_cast<std::size_t>(k)] = r_yaw * j[static_cast<std::size_t>(k)] + script.base;
  pose.object.R = r_yaw * obj.R;
  pose.object.t = r_yaw * obj.t + script.base;
  pose.anchor = r_yaw * anchor + script.base;
  return pose;
}

}  // namespace

const char* synth_class_name(std::size_t class_id) {
  switch (static_cast<SynthClass>(class_id)) {
    case SynthClass::Box:
      return "box";
    case SynthClass::Stick:
      return "stick";
    case SynthClass::Ball:
      return "ball";
    case SynthClass::Board:
      return "board";
    default:
      throw DataError("unknown synthetic class id");
  }
}

bool synth_class_two_handed(std::size_t class_id) {
  return static_cast<SynthClass>(class_id) == SynthClass::Box ||
         static_cast<SynthClass>(class_id) == SynthClass::Board;
}

ObjectTemplate make_synth_template(std::size_t class_id, std::size_t keypoint_count,
                                   std::uint64_t seed) {
  ObjectTemplate t;
  t.class_id = class_id;
  t.name = synth_class_name(class_id);
  switch (static_cast<SynthClass>(class_id)) {
    case SynthClass::Box:
      t.mesh = make_cuboid(0.16, 0.11, 0.09);
      break;
    case SynthClass::Stick:
      t.mesh = make_cuboid(0.42, 0.022, 0.022);
      break;
    case SynthClass::Ball:
      t.mesh = make_icosphere(0.09, 2);
      break;
    case SynthClass::Board:
      t.mesh = make_cuboid(0.62, 0.018, 0.42);
      break;
    default:
      throw DataError("unknown synthetic class id");
  }
  t.keypoints = sample_surface(t.mesh, keypoint_count, Rng::derive(seed, class_id, 77));

  // recenter so the key-point centroid is exactly the origin; then the
  // ground-truth center equals the pose translation
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : t.keypoints) centroid += p;
  centroid /= static_cast<double>(t.keypoints.size());
  for (auto& p : t.keypoints) p -= centroid;
  for (auto& v : t.mesh.vertices) v -= centroid;
  return t;
}

std::vector<SynthFrame> generate_sequence(const SynthConfig& config, std::size_t class_id,
                                          std::uint64_t seed, std::size_t sequence_index) {
  Rng rng(Rng::derive(seed, sequence_index, 1));
  auto script = make_script(class_id, rng);
  auto body = make_body_template(config.points_per_frame, rng);
  const auto& segs = body_segments();

  std::vector<SynthFrame> frames;
  frames.reserve(config.frames_per_sequence);
  for (std::size_t f = 0; f < config.frames_per_sequence; ++f) {
    double t = static_cast<double>(f) / config.fps;
    auto pose = pose_at(script, class_id, t);
    Mat3 r_yaw = yaw_rotation(script.yaw0 + script.yaw_rate * t);

    SynthFrame frame;
    frame.cloud = ad::Matrix(config.points_per_frame, 3);
    Rng noise(Rng::derive(seed, sequence_index, 1000 + f));
    for (std::size_t i = 0; i < config.points_per_frame; ++i) {
      const auto& seg = segs[body.segment[i]];
      Vec3 a = pose.joints[static_cast<std::size_t>(seg.joint_a)];
      Vec3 b = pose.joints[static_cast<std::size_t>(seg.joint_b)];
      Vec3 p = a + body.u[i] * (b - a) + r_yaw * body.offset[i];
      p += Vec3(noise.normal(), noise.normal(), noise.normal()) * config.noise_sigma;
      frame.cloud(i, 0) = p.x();
      frame.cloud(i, 1) = p.y();
      frame.cloud(i, 2) = p.z();
    }
    frame.gt.pose = pose.object;
    frame.gt.center = pose.object.t;  // key-point centroid is the origin
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::string SynthConfig::to_json_string() const {
  nlohmann::json j{{"sequences", sequences},
                   {"frames_per_sequence", frames_per_sequence},
                   {"points_per_frame", points_per_frame},
                   {"keypoint_count", keypoint_count},
                   {"fps", fps},
                   {"train_fraction", train_fraction},
                   {"val_fraction", val_fraction},
                   {"noise_sigma", noise_sigma},
                   {"write_ply", write_ply}};
  return j.dump(2);
}

SynthConfig SynthConfig::from_json_string(const std::string& s) {
  auto j = nlohmann::json::parse(s);
  SynthConfig c;
  if (j.contains("sequences")) j.at("sequences").get_to(c.sequences);
  if (j.contains("frames_per_sequence")) j.at("frames_per_sequence").get_to(c.frames_per_sequence);
  if (j.contains("points_per_frame")) j.at("points_per_frame").get_to(c.points_per_frame);
  if (j.contains("keypoint_count")) j.at("keypoint_count").get_to(c.keypoint_count);
  if (j.contains("fps")) j.at("fps").get_to(c.fps);
  if (j.contains("train_fraction")) j.at("train_fraction").get_to(c.train_fraction);
  if (j.contains("val_fraction")) j.at("val_fraction").get_to(c.val_fraction);
  if (j.contains("noise_sigma")) j.at("noise_sigma").get_to(c.noise_sigma);
  if (j.contains("write_ply")) j.at("write_ply").get_to(c.write_ply);
  return c;
}

DatasetManifest generate_synthetic(const SynthConfig& config, std::uint64_t seed,
                                   const std::filesystem::path& out_dir) {
  if (config.sequences < 2 * kSynthClassCount)
    throw DataError("generate_synthetic: need at least 2 sequences per class");
  if (config.points_per_frame < 100) throw DataError("generate_synthetic: too few points");
  if (config.train_fraction + config.val_fraction >= 1.0)
    throw DataError("generate_synthetic: train+val fraction must leave room for test");

  std::filesystem::create_directories(out_dir);

  std::vector<ObjectTemplate> templates;
  for (std::size_t c = 0; c < kSynthClassCount; ++c)
    templates.push_back(make_synth_template(c, config.keypoint_count, seed));

  DatasetManifest manifest;
  for (std::size_t c = 0; c < kSynthClassCount; ++c) manifest.classes.push_back(synth_class_name(c));
  manifest.points_per_frame = config.points_per_frame;
  manifest.keypoint_count = config.keypoint_count;
  manifest.seed = seed;

  // per-class round robin; splits assigned per class so each split sees
  // every class, and always split by sequence
  std::size_t per_class = config.sequences / kSynthClassCount;
  for (std::size_t s = 0; s < config.sequences; ++s) {
    std::size_t class_id = s % kSynthClassCount;
    std::size_t rank = s / kSynthClassCount;  // index of this sequence within its class
    std::size_t n_train = static_cast<std::size_t>(
        std::round(config.train_fraction * static_cast<double>(per_class)));
    std::size_t n_val = static_cast<std::size_t>(
        std::round(config.val_fraction * static_cast<double>(per_class)));
    if (n_train == 0) n_train = 1;
    if (n_train + n_val >= per_class) n_val = per_class > n_train + 1 ? 1 : 0;
    std::string split = rank < n_train ? "train" : (rank < n_train + n_val ? "val" : "test");

    char id[32];
    std::snprintf(id, sizeof(id), "seq%03zu", s);
    SequenceMeta meta;
    meta.id = id;
    meta.class_id = class_id;
    meta.split = split;
    meta.fps = config.fps;
    meta.dir = id;

    auto frames = generate_sequence(config, class_id, seed, s);
    std::vector<ad::Matrix> clouds;
    std::vector<FrameGroundTruth> gt;
    for (auto& f : frames) {
      clouds.push_back(std::move(f.cloud));
      gt.push_back(f.gt);
    }
    manifest.sequences.push_back(
        write_sequence(out_dir, meta, clouds, gt, config.write_ply));
  }

  write_manifest(out_dir, manifest, templates);
  return manifest;
}

}  // namespace popup
