#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "popup/synth.hpp"

using namespace popup;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.sequences = 8;
  c.frames_per_sequence = 3;
  c.points_per_frame = 200;
  c.keypoint_count = 12;
  c.train_fraction = 0.5;
  c.val_fraction = 0.25;
  c.write_ply = false;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "popup_dataset_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp_binary(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("generation is byte-identical for a fixed seed") {
  auto cfg = small_config();
  auto a = fresh_dir("det_a");
  auto b = fresh_dir("det_b");
  auto ma = generate_synthetic(cfg, 42, a);
  auto mb = generate_synthetic(cfg, 42, b);
  CHECK(ma.to_json_string() == mb.to_json_string());
  for (const auto& seq : ma.sequences) {
    CHECK(slurp_binary(a / seq.dir / "points.raw") == slurp_binary(b / seq.dir / "points.raw"));
    CHECK(slurp_binary(a / seq.dir / "gt.json") == slurp_binary(b / seq.dir / "gt.json"));
  }
  auto mc = generate_synthetic(cfg, 43, fresh_dir("det_c"));
  CHECK(mc.sequences[0].raw_hash != ma.sequences[0].raw_hash);
}

TEST_CASE("the object stays near the figure that holds it") {
  auto cfg = small_config();
  cfg.frames_per_sequence = 6;
  for (std::size_t cls = 0; cls < kSynthClassCount; ++cls) {
    auto frames = generate_sequence(cfg, cls, 7, cls);
    for (const auto& f : frames) {
      double nearest = 1e9;
      for (std::size_t r = 0; r < f.cloud.rows(); ++r) {
        Vec3 p(f.cloud(r, 0), f.cloud(r, 1), f.cloud(r, 2));
        nearest = std::min(nearest, (p - f.gt.center).norm());
      }
      // the center sits at most one interaction radius plus shell noise away
      CHECK(nearest < kTwoHandedMaxDist + 0.1);
      CHECK(f.gt.pose.is_valid(1e-9));
      CHECK((f.gt.center - f.gt.pose.t).norm() < 1e-12);
    }
  }
}

TEST_CASE("sequences land at distinct places in the room") {
  auto cfg = small_config();
  auto a = generate_sequence(cfg, 0, 7, 0);
  auto b = generate_sequence(cfg, 0, 7, 3);
  Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
  for (std::size_t r = 0; r < a[0].cloud.rows(); ++r) {
    ca += Vec3(a[0].cloud(r, 0), a[0].cloud(r, 1), a[0].cloud(r, 2));
    cb += Vec3(b[0].cloud(r, 0), b[0].cloud(r, 1), b[0].cloud(r, 2));
  }
  ca /= static_cast<double>(a[0].cloud.rows());
  cb /= static_cast<double>(b[0].cloud.rows());
  CHECK((ca - cb).norm() > 0.05);
}

TEST_CASE("written datasets load back with matching frames") {
  auto cfg = small_config();
  auto dir = fresh_dir("roundtrip");
  auto manifest = generate_synthetic(cfg, 5, dir);
  auto ds = Dataset::load(dir / "manifest.json");

  CHECK(ds.manifest().classes.size() == kSynthClassCount);
  CHECK(ds.templates().size() == kSynthClassCount);
  for (std::size_t c = 0; c < kSynthClassCount; ++c) {
    CHECK(ds.template_for_class(c).keypoints.size() == cfg.keypoint_count);
    // canonical keypoints are centered at the origin
    Vec3 mean = Vec3::Zero();
    for (const auto& p : ds.template_for_class(c).keypoints) mean += p;
    CHECK(mean.norm() / static_cast<double>(cfg.keypoint_count) < 1e-7);  // f32 storage
  }

  auto seq = ds.load_sequence(0);
  REQUIRE(seq.clouds.size() == cfg.frames_per_sequence);
  REQUIRE(seq.gt.size() == cfg.frames_per_sequence);
  auto regen = generate_sequence(cfg, manifest.sequences[0].class_id, 5, 0);
  for (std::size_t f = 0; f < seq.clouds.size(); ++f) {
    for (std::size_t i = 0; i < seq.clouds[f].size(); ++i)
      CHECK(seq.clouds[f].at(i) ==
            doctest::Approx(regen[f].cloud.at(i)).epsilon(1e-6));  // f32 storage
    CHECK((seq.gt[f].center - regen[f].gt.center).norm() < 1e-12);
  }

  // gt keypoints are the pose applied to the canonical template
  auto kps = ds.gt_keypoints(seq, 1);
  const auto& tmpl = ds.template_for_class(seq.meta.class_id);
  REQUIRE(kps.size() == tmpl.keypoints.size());
  for (std::size_t i = 0; i < kps.size(); ++i)
    CHECK((kps[i] - seq.gt[1].pose.apply(tmpl.keypoints[i])).norm() < 1e-12);
}

TEST_CASE("splits cover every sequence exactly once") {
  auto cfg = small_config();
  cfg.sequences = 16;  // 4 per class: 2 train, 1 val, 1 test each
  auto dir = fresh_dir("splits");
  generate_synthetic(cfg, 6, dir);
  auto ds = Dataset::load(dir / "manifest.json");
  auto train = ds.sequence_indices("train");
  auto val = ds.sequence_indices("val");
  auto test = ds.sequence_indices("test");
  CHECK(train.size() == 8);
  CHECK(val.size() == 4);
  CHECK(test.size() == 4);
  std::vector<std::size_t> all;
  all.insert(all.end(), train.begin(), train.end());
  all.insert(all.end(), val.begin(), val.end());
  all.insert(all.end(), test.begin(), test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
  // every class appears in the training split
  std::vector<bool> seen(kSynthClassCount, false);
  for (auto i : train) seen[ds.manifest().sequences[i].class_id] = true;
  for (bool s : seen) CHECK(s);
}

TEST_CASE("corrupted frame data is rejected by name") {
  auto cfg = small_config();
  auto dir = fresh_dir("corrupt");
  auto manifest = generate_synthetic(cfg, 8, dir);
  auto raw = dir / manifest.sequences[2].dir / "points.raw";
  {
    std::fstream f(raw, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    char b = 0x5a;
    f.write(&b, 1);
  }
  auto ds = Dataset::load(dir / "manifest.json");  // lazy frames: load succeeds
  bool threw = false;
  try {
    ds.load_sequence(2);
  } catch (const DataError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("points.raw") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("bad split assignments are rejected at load") {
  auto cfg = small_config();
  auto dir = fresh_dir("badsplit");
  generate_synthetic(cfg, 9, dir);
  auto manifest = DatasetManifest::from_json_string(slurp_binary(dir / "manifest.json"));

  SUBCASE("a sequence id listed in two splits") {
    auto dup = manifest.sequences[0];
    dup.split = "test";
    manifest.sequences.push_back(dup);
  }
  SUBCASE("an unknown split name") { manifest.sequences[0].split = "weekend"; }

  std::ofstream(dir / "manifest.json") << manifest.to_json_string();
  CHECK_THROWS_AS(Dataset::load(dir / "manifest.json"), DataError);
}

TEST_CASE("manifest json round-trips") {
  auto cfg = small_config();
  auto dir = fresh_dir("manifest_rt");
  auto manifest = generate_synthetic(cfg, 10, dir);
  auto back = DatasetManifest::from_json_string(manifest.to_json_string());
  CHECK(back.to_json_string() == manifest.to_json_string());
  CHECK(back.sequences.size() == manifest.sequences.size());
  CHECK(back.sequences[3].raw_hash == manifest.sequences[3].raw_hash);
  CHECK(back.keypoint_count == cfg.keypoint_count);
}
