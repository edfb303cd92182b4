// End-to-end acceptance checks. Each check prints one [PASS]/[FAIL] line;
// the exit code is the number of failed checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "popup/baseline.hpp"
#include "popup/pipeline.hpp"
#include "popup/rng.hpp"
#include "popup/saliency.hpp"
#include "popup/synth.hpp"
#include "popup/training.hpp"

using namespace popup;
using ad::Matrix;
using ad::Var;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(const std::string& name, bool ok, double secs, const std::string& detail) {
  std::printf("[%s] %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", name.c_str(), secs,
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
}

Mat3 random_rotation(Rng& rng) {
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  if (axis.norm() < 1e-12) axis = Vec3(0, 1, 0);
  return Eigen::AngleAxisd(rng.uniform(-M_PI, M_PI), axis.normalized()).toRotationMatrix();
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  double c = ((a.transpose() * b).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

std::vector<Vec3> random_points(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<Vec3> pts;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    pts.emplace_back(rng.uniform(-scale, scale), rng.uniform(-scale, scale),
                     rng.uniform(-scale, scale));
  return pts;
}

// ---------------------------------------------------------------- check 1

bool check_rigid_fit_oracles(std::string& detail) {
  Rng rng(101);
  double worst_rot = 0, worst_trans = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t n = 4 + rng.uniform_index(60);
    auto src = random_points(n, rng);
    Mat3 r = random_rotation(rng);
    Vec3 t(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    std::vector<Vec3> dst(n);
    for (std::size_t i = 0; i < n; ++i) dst[i] = r * src[i] + t;
    auto fit = procrustes_align(src, dst);
    worst_rot = std::max(worst_rot, rotation_angle_between(fit.transform.R, r));
    worst_trans = std::max(worst_trans, (fit.transform.t - t).norm());
  }
  if (worst_rot >= 1e-8 || worst_trans >= 1e-9) {
    detail = "rigid recovery error rot " + std::to_string(worst_rot) + " trans " +
             std::to_string(worst_trans);
    return false;
  }

  double worst_ch = 0, worst_v2v = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t na = 3 + rng.uniform_index(40);
    std::size_t nb = 3 + rng.uniform_index(40);
    auto a = random_points(na, rng);
    auto b = random_points(nb, rng);

    auto directed = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
      double total = 0;
      for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) best = std::min(best, (p - q).norm());
        total += best;
      }
      return total / static_cast<double>(from.size());
    };
    worst_ch = std::max(worst_ch,
                        std::abs(chamfer_distance(a, b) - (directed(a, b) + directed(b, a))));

    auto c = random_points(na, rng);
    double frob = 0;
    for (std::size_t i = 0; i < na; ++i) frob += (a[i] - c[i]).squaredNorm();
    worst_v2v = std::max(worst_v2v, std::abs(v2v_error(a, c) - std::sqrt(frob)));
  }
  if (worst_ch >= 1e-12 || worst_v2v >= 1e-12) {
    detail = "metric oracle error chamfer " + std::to_string(worst_ch) + " v2v " +
             std::to_string(worst_v2v);
    return false;
  }
  detail = "1000 rigid recoveries, 100 chamfer/v2v oracle pairs";
  return true;
}

// ---------------------------------------------------------------- check 2

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1, double hi = 1) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.at(i) = rng.uniform(lo, hi);
  return m;
}

// central-difference check of d scalar(inputs) / d inputs[0]
bool fd_check(const std::string& op, const std::vector<Matrix>& inputs,
              const std::function<Var(const std::vector<Var>&)>& build, std::string& detail,
              double h = 1e-5, double tol = 1e-4) {
  auto eval = [&](const std::vector<Matrix>& vals) {
    std::vector<Var> leaves;
    for (const auto& v : vals) leaves.push_back(Var::leaf(v, true));
    return std::make_pair(build(leaves), leaves);
  };

  auto [out, leaves] = eval(inputs);
  ad::backward(out);
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    for (std::size_t i = 0; i < inputs[which].size(); ++i) {
      auto plus = inputs;
      auto minus = inputs;
      plus[which].at(i) += h;
      minus[which].at(i) -= h;
      double fd = (eval(plus).first.value()(0, 0) - eval(minus).first.value()(0, 0)) / (2 * h);
      double an = leaves[which].has_grad() ? leaves[which].grad().at(i) : 0.0;
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
      if (rel > tol) {
        detail = op + ": input " + std::to_string(which) + " entry " + std::to_string(i) +
                 " fd " + std::to_string(fd) + " vs " + std::to_string(an);
        return false;
      }
    }
  }
  return true;
}

bool check_gradients(std::string& detail) {
  Rng rng(202);
  // a fixed projection makes every op output a scalar through one extra mul;
  // the weights depend only on the shape so repeated evaluations (the FD
  // probes) see the same function
  auto project = [](const Var& v) {
    Rng r(55 + v.rows() * 131 + v.cols());
    Matrix w(v.rows(), v.cols());
    for (std::size_t i = 0; i < w.size(); ++i) w.at(i) = r.uniform(-1, 1);
    return ad::sum(ad::mul(v, Var::leaf(std::move(w))));
  };

  std::vector<std::pair<std::string, bool>> results;
  auto run = [&](const std::string& name, const std::vector<Matrix>& inputs,
                 const std::function<Var(const std::vector<Var>&)>& build) {
    std::string d;
    bool ok = fd_check(name, inputs, build, d);
    if (!ok && detail.empty()) detail = d;
    results.emplace_back(name, ok);
  };

  Matrix a = random_matrix(3, 4, rng);
  Matrix b = random_matrix(3, 4, rng);
  Matrix row = random_matrix(1, 4, rng);
  Matrix col = random_matrix(3, 1, rng);
  Matrix sca = random_matrix(1, 1, rng);
  Matrix bpos = random_matrix(3, 4, rng, 0.5, 1.5);   // divisors/sqrt away from 0
  Matrix rpos = random_matrix(1, 4, rng, 0.5, 1.5);
  Matrix relu_in = random_matrix(3, 4, rng, 0.1, 1.0);  // off the kink
  for (std::size_t i = 0; i < relu_in.size(); i += 2) relu_in.at(i) = -relu_in.at(i);

  run("matmul", {random_matrix(3, 5, rng), random_matrix(5, 2, rng)},
      [&](const std::vector<Var>& v) { return project(ad::matmul(v[0], v[1])); });
  run("add.same", {a, b}, [&](const std::vector<Var>& v) { return project(ad::add(v[0], v[1])); });
  run("add.row", {a, row}, [&](const std::vector<Var>& v) { return project(ad::add(v[0], v[1])); });
  run("add.col", {a, col}, [&](const std::vector<Var>& v) { return project(ad::add(v[0], v[1])); });
  run("add.scalar", {a, sca}, [&](const std::vector<Var>& v) { return project(ad::add(v[0], v[1])); });
  run("sub.same", {a, b}, [&](const std::vector<Var>& v) { return project(ad::sub(v[0], v[1])); });
  run("sub.row", {a, row}, [&](const std::vector<Var>& v) { return project(ad::sub(v[0], v[1])); });
  run("mul.same", {a, b}, [&](const std::vector<Var>& v) { return project(ad::mul(v[0], v[1])); });
  run("mul.col", {a, col}, [&](const std::vector<Var>& v) { return project(ad::mul(v[0], v[1])); });
  run("div.same", {a, bpos}, [&](const std::vector<Var>& v) { return project(ad::div(v[0], v[1])); });
  run("div.row", {a, rpos}, [&](const std::vector<Var>& v) { return project(ad::div(v[0], v[1])); });
  run("scale", {a}, [&](const std::vector<Var>& v) { return project(ad::scale(v[0], -1.7)); });
  run("add_const", {a}, [&](const std::vector<Var>& v) { return project(ad::add_const(v[0], 0.4)); });
  run("relu", {relu_in}, [&](const std::vector<Var>& v) { return project(ad::relu(v[0])); });
  run("sin", {a}, [&](const std::vector<Var>& v) { return project(ad::sin(v[0])); });
  run("cos", {a}, [&](const std::vector<Var>& v) { return project(ad::cos(v[0])); });
  run("sqrt", {bpos}, [&](const std::vector<Var>& v) { return project(ad::sqrt(v[0])); });
  run("sum", {a}, [&](const std::vector<Var>& v) { return ad::sum(v[0]); });
  run("sum_squares", {a}, [&](const std::vector<Var>& v) { return ad::sum_squares(v[0]); });
  run("colsum", {a}, [&](const std::vector<Var>& v) { return project(ad::colsum(v[0])); });
  run("rowsum", {a}, [&](const std::vector<Var>& v) { return project(ad::rowsum(v[0])); });
  run("colmax", {a}, [&](const std::vector<Var>& v) { return project(ad::colmax(v[0])); });
  run("group_colmax", {random_matrix(6, 4, rng)},
      [&](const std::vector<Var>& v) { return project(ad::group_colmax(v[0], 2)); });
  run("gather_rows", {a}, [&](const std::vector<Var>& v) {
    return project(ad::gather_rows(v[0], {2, 0, 0, 1}));
  });
  run("concat_cols", {a, b}, [&](const std::vector<Var>& v) {
    return project(ad::concat_cols({v[0], v[1]}));
  });
  run("concat_rows", {a, b}, [&](const std::vector<Var>& v) {
    return project(ad::concat_rows({v[0], v[1]}));
  });
  run("slice_cols", {a}, [&](const std::vector<Var>& v) {
    return project(ad::slice_cols(v[0], 1, 2));
  });
  run("tile_rows", {row}, [&](const std::vector<Var>& v) {
    return project(ad::tile_rows(v[0], 4));
  });
  run("softmax", {a}, [&](const std::vector<Var>& v) { return project(ad::softmax(v[0])); });
  run("cross_entropy_logits", {random_matrix(1, 5, rng)},
      [&](const std::vector<Var>& v) { return ad::cross_entropy_logits(v[0], 3); });

  std::size_t failed = 0;
  for (const auto& [name, ok] : results)
    if (!ok) ++failed;
  if (failed > 0) return false;

  // the full training loss on a miniature network, checked against finite
  // differences over a sample of every parameter tensor
  PopupConfig mc;
  mc.num_classes = 2;
  mc.keypoint_count = 4;
  mc.local_k = 6;
  mc.posenc_bands = 2;
  mc.global_levels = {{6, 4, {8, 8}}};
  mc.global_mlp = {16};
  mc.center_head = {8};
  mc.local_level = {4, 3, {8, 8}};
  mc.propagation_neighbors = 2;
  mc.decoder_mlp = {8, 8};
  mc.class_head = true;
  mc.class_mlp = {8};
  auto net = PopupNetwork::init(mc, 7);

  Rng srng(204);
  Matrix cloud = random_matrix(16, 3, srng);
  auto tmpl = make_synth_template(1, 4, 9);
  Matrix kp = points_to_matrix(tmpl.keypoints);
  Vec3 gt_center(0.2, -0.1, 0.3);
  std::vector<Vec3> gt_kp(4);
  Mat3 gr = random_rotation(srng);
  for (std::size_t i = 0; i < 4; ++i)
    gt_kp[i] = gr * tmpl.keypoints[i] + gt_center;
  const double alpha = 100.0;

  auto loss_value = [&]() {
    // the center the offsets are decoded around is pinned to the ground
    // truth, so the offset targets are constants of the graph
    auto fwd = net.forward(cloud, 1, kp, gt_center);
    Matrix gt_c(1, 3);
    gt_c(0, 0) = gt_center.x();
    gt_c(0, 1) = gt_center.y();
    gt_c(0, 2) = gt_center.z();
    Matrix gt_off(4, 3);
    for (std::size_t i = 0; i < 4; ++i) {
      gt_off(i, 0) = gt_kp[i].x() - (kp(i, 0) + gt_center.x());
      gt_off(i, 1) = gt_kp[i].y() - (kp(i, 1) + gt_center.y());
      gt_off(i, 2) = gt_kp[i].z() - (kp(i, 2) + gt_center.z());
    }
    Var l = ad::add(ad::sum_squares(ad::sub(fwd.center, Var::leaf(std::move(gt_c)))),
                    ad::scale(ad::sum_squares(ad::sub(fwd.offsets, Var::leaf(std::move(gt_off)))),
                              alpha));
    l = ad::add(l, ad::cross_entropy_logits(fwd.class_logits, 1));
    return l;
  };

  Var total = loss_value();
  ad::backward(total);
  std::vector<Matrix> grads;
  for (auto& p : net.parameters())
    grads.push_back(p.has_grad() ? p.grad() : Matrix(p.rows(), p.cols()));

  const double h = 1e-5;
  std::size_t checked = 0;
  for (std::size_t pi = 0; pi < net.parameters().size(); ++pi) {
    auto& p = net.parameters()[pi];
    for (std::size_t i = 0; i < p.value().size(); i += 7) {
      double orig = p.value().at(i);
      p.mutable_value().at(i) = orig + h;
      double up = loss_value().value()(0, 0);
      p.mutable_value().at(i) = orig - h;
      double down = loss_value().value()(0, 0);
      p.mutable_value().at(i) = orig;
      double fd = (up - down) / (2 * h);
      double an = grads[pi].at(i);
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
      ++checked;
      if (rel > 1e-4) {
        detail = "full loss: param " + std::to_string(pi) + " entry " + std::to_string(i) +
                 " fd " + std::to_string(fd) + " vs " + std::to_string(an);
        return false;
      }
    }
  }
  detail = std::to_string(results.size()) + " primitives, " + std::to_string(checked) +
           " full-loss parameter entries";
  return true;
}

// ---------------------------------------------------------------- check 3

SynthConfig e2e_synth_config() {
  SynthConfig sc;
  sc.sequences = 60;
  sc.frames_per_sequence = 10;
  sc.points_per_frame = 2048;
  sc.keypoint_count = 128;
  sc.train_fraction = 0.7;
  sc.val_fraction = 0.1;
  sc.noise_sigma = 0.002;
  sc.write_ply = false;
  return sc;
}

PopupConfig e2e_model_config() {
  PopupConfig mc;
  mc.num_classes = 4;
  mc.keypoint_count = 128;
  mc.local_k = 192;
  mc.posenc_bands = 4;
  mc.global_levels = {{128, 16, {32, 64}}, {48, 16, {64, 128}}};
  mc.global_mlp = {256};
  mc.center_head = {128};
  mc.local_level = {64, 16, {32, 64}};
  mc.propagation_neighbors = 3;
  mc.decoder_mlp = {256, 256};
  mc.class_head = true;
  mc.class_mlp = {64};
  mc.rt_mlp = {128, 128};
  return mc;
}

TrainConfig e2e_train_config(std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = 30;
  tc.warmup_epochs_gt_center = 12;
  tc.lr = 1e-3;
  tc.lr_decay_epochs = {12, 24};
  tc.alpha = 100.0;
  tc.batch_size = 4;
  tc.train_points = 384;
  tc.seed = seed;
  return tc;
}

constexpr std::uint64_t kDataSeed = 11;
constexpr std::size_t kEvalPoints = 384;

Predictor model_predictor(const PopupNetwork& net, const std::vector<ObjectTemplate>& templates) {
  return [&net, &templates](const Matrix& cloud, std::optional<std::size_t> cid) {
    std::size_t c;
    if (cid) {
      c = *cid;
    } else {
      auto scores = net.predict_class(cloud);
      c = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) -
                                   scores.begin());
    }
    auto est = popup_single(cloud, c, net, templates.at(c));
    return PredictorOutput{est.center, est.posed_keypoints, c};
  };
}

Predictor nn_predictor(const TrainBank& bank, const std::vector<ObjectTemplate>& templates) {
  return [&bank, &templates](const Matrix& cloud, std::optional<std::size_t> cid) {
    auto res = nn_retrieve(cloud, bank, cid);
    PredictorOutput out;
    out.class_id = res.class_id;
    out.posed_keypoints = res.pose.apply(templates.at(res.class_id).keypoints);
    Vec3 mean = Vec3::Zero();
    for (const auto& p : out.posed_keypoints) mean += p;
    out.center = mean / static_cast<double>(out.posed_keypoints.size());
    return out;
  };
}

std::vector<PredictionSample> test_samples(const Dataset& ds) {
  std::vector<PredictionSample> samples;
  for (auto si : ds.sequence_indices("test")) {
    auto seq = ds.load_sequence(si);
    for (std::size_t f = 0; f < seq.clouds.size(); ++f) {
      PredictionSample s;
      s.cloud = subsample_cloud_stride(seq.clouds[f], kEvalPoints);
      s.gt = seq.gt[f];
      s.gt_class = seq.meta.class_id;
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

struct AccuracyPair {
  double per_frame = 0;
  double voted = 0;
};

AccuracyPair classification_accuracy(const Dataset& ds, const PopupNetwork& net) {
  std::size_t frames_ok = 0, frames = 0, seq_ok = 0, seqs = 0;
  for (auto si : ds.sequence_indices("test")) {
    auto seq = ds.load_sequence(si);
    std::vector<std::vector<double>> scores;
    for (const auto& cloud : seq.clouds) {
      auto s = net.predict_class(subsample_cloud_stride(cloud, kEvalPoints));
      std::size_t am =
          static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
      frames_ok += am == seq.meta.class_id;
      ++frames;
      scores.push_back(std::move(s));
    }
    seq_ok += vote_class(scores) == seq.meta.class_id;
    ++seqs;
  }
  return {100.0 * static_cast<double>(frames_ok) / static_cast<double>(frames),
          100.0 * static_cast<double>(seq_ok) / static_cast<double>(seqs)};
}

struct SeedOutcome {
  double model_ec = 0, model_v2v = 0;
  double nn_ec = 0, nn_v2v = 0;
  double rt_v2v = 0;
  AccuracyPair acc;
  bool beats_nn() const { return model_ec < nn_ec && model_v2v < nn_v2v; }
  bool voting_helps() const { return acc.voted >= acc.per_frame; }
  bool beats_rt() const { return rt_v2v > model_v2v; }
};

bool check_end_to_end(const std::filesystem::path& dir, std::string& detail,
                      Checkpoint* first_offset_checkpoint) {
  generate_synthetic(e2e_synth_config(), kDataSeed, dir);
  auto ds = Dataset::load(dir / "manifest.json");
  auto train_set = build_samples(ds, "train", kEvalPoints);
  auto val_set = build_samples(ds, "val", kEvalPoints);
  auto samples = test_samples(ds);
  auto bank = build_train_bank(ds, "train", kEvalPoints);
  auto nn_report =
      evaluate(samples, ds.templates(), nn_predictor(bank, ds.templates()),
               EvalMode::GivenClass, 4);

  PopupConfig rt_config = e2e_model_config();
  rt_config.direct_rt = true;

  std::size_t nn_ok = 0, vote_ok = 0, rt_ok = 0, seeds_run = 0;
  std::string lines;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    auto offset_run = train(e2e_train_config(seed), e2e_model_config(), train_set, val_set,
                            ds.templates());
    auto rt_run = train(e2e_train_config(seed), rt_config, train_set, val_set, ds.templates());
    if (offset_run.diverged || rt_run.diverged) {
      lines += " seed " + std::to_string(seed) + ": diverged;";
      continue;
    }
    auto net = PopupNetwork::from_checkpoint(offset_run.checkpoint);
    auto rt_net = PopupNetwork::from_checkpoint(rt_run.checkpoint);
    if (seed == 1 && first_offset_checkpoint) *first_offset_checkpoint = offset_run.checkpoint;

    SeedOutcome o;
    auto model_report = evaluate(samples, ds.templates(), model_predictor(net, ds.templates()),
                                 EvalMode::GivenClass, 4);
    auto rt_report = evaluate(samples, ds.templates(), model_predictor(rt_net, ds.templates()),
                              EvalMode::GivenClass, 4);
    o.model_ec = model_report.e_center;
    o.model_v2v = model_report.e_v2v;
    o.nn_ec = nn_report.e_center;
    o.nn_v2v = nn_report.e_v2v;
    o.rt_v2v = rt_report.e_v2v;
    o.acc = classification_accuracy(ds, net);
    ++seeds_run;
    nn_ok += o.beats_nn();
    vote_ok += o.voting_helps();
    rt_ok += o.beats_rt();
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  " seed %llu: E_c %.3f/nn %.3f, E_v2v %.2f/nn %.2f/rt %.2f, acc %.1f/voted "
                  "%.1f [%c%c%c];",
                  static_cast<unsigned long long>(seed), o.model_ec, o.nn_ec, o.model_v2v,
                  o.nn_v2v, o.rt_v2v, o.acc.per_frame, o.acc.voted, o.beats_nn() ? 'a' : '-',
                  o.voting_helps() ? 'b' : '-', o.beats_rt() ? 'c' : '-');
    lines += buf;
  }
  // each ordering must hold on at least 2 of the 3 seeds
  char head[128];
  std::snprintf(head, sizeof(head),
                "beats NN %zu/3, voting helps %zu/3, beats direct R,t %zu/3;", nn_ok, vote_ok,
                rt_ok);
  detail = head + lines;
  return seeds_run == 3 && nn_ok >= 2 && vote_ok >= 2 && rt_ok >= 2;
}

// ---------------------------------------------------------------- check 4

bool check_smoothing(std::string& detail) {
  SynthConfig sc;
  sc.frames_per_sequence = 60;
  sc.points_per_frame = 100;
  sc.keypoint_count = 8;
  double total_noisy = 0, total_smoothed = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto frames = generate_sequence(sc, seed % kSynthClassCount, 31, seed);
    std::vector<Vec3> gt;
    for (const auto& f : frames) gt.push_back(f.gt.center);
    Rng noise(Rng::derive(77, seed, 0));
    std::vector<Vec3> noisy = gt;
    for (auto& p : noisy)
      p += 0.02 * Vec3(noise.normal(), noise.normal(), noise.normal());
    auto smoothed = smooth_sequence(noisy, SequenceOptions{}.smoothing_sigma);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      total_noisy += (noisy[i] - gt[i]).norm();
      total_smoothed += (smoothed[i] - gt[i]).norm();
    }
  }
  double reduction = 100.0 * (1.0 - total_smoothed / total_noisy);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "mean E_c reduced by %.1f%% over 5 noise seeds", reduction);
  detail = buf;
  return reduction >= 20.0;
}

// ---------------------------------------------------------------- check 5

bool check_saliency(const Checkpoint& ckpt, std::string& detail) {
  auto net = PopupNetwork::from_checkpoint(ckpt);
  if (net.config().direct_rt) {
    detail = "model has no offset head";
    return false;
  }

  SynthConfig sc = e2e_synth_config();
  sc.points_per_frame = 9000;
  sc.frames_per_sequence = 5;

  // pooled enrichment test: how many touched points (first iteration, all
  // frames) fall within kNearRadius of the gt center, against the null that
  // every frame's selection is a uniform random subset of its cloud
  const double kNearRadius = 0.15;
  std::size_t frames_total = 0;
  std::size_t observed_near = 0;
  std::vector<std::pair<double, std::size_t>> null_frames;  // (near fraction, picks)
  for (std::size_t cls = 0; cls < kSynthClassCount; ++cls) {
    auto tmpl = make_synth_template(cls, sc.keypoint_count, kDataSeed);
    Matrix kp = points_to_matrix(tmpl.keypoints);
    auto frames = generate_sequence(sc, cls, kDataSeed, 500 + cls);
    for (const auto& frame : frames) {
      std::vector<Vec3> gt_kp(tmpl.keypoints.size());
      for (std::size_t i = 0; i < gt_kp.size(); ++i)
        gt_kp[i] = frame.gt.pose.apply(tmpl.keypoints[i]);

      auto res = saliency_iterate(frame.cloud, cls, gt_kp, net, kp, 10, 0.01, 0.05);
      if (res.masks.size() != 10) {
        detail = "expected 10 iterations";
        return false;
      }

      Matrix prev = frame.cloud;
      for (std::size_t it = 0; it < res.masks.size(); ++it) {
        if (res.masks[it].size() != 90) {
          detail = "iteration touched " + std::to_string(res.masks[it].size()) + " points";
          return false;
        }
        Vec3 median = coordinate_median(PointCloud{matrix_to_points(prev)});
        const Matrix& cur = res.clouds[it];
        std::size_t mi = 0;
        for (std::size_t r = 0; r < cur.rows(); ++r) {
          bool touched = mi < res.masks[it].size() && res.masks[it][mi] == r;
          for (std::size_t c = 0; c < 3; ++c) {
            double expected =
                touched ? prev(r, c) - 0.05 * (prev(r, c) - median[static_cast<Eigen::Index>(c)])
                        : prev(r, c);
            if (cur(r, c) != expected) {
              detail = "iteration " + std::to_string(it) + " moved point " + std::to_string(r) +
                       " off the exact 0.95 contraction";
              return false;
            }
          }
          if (touched) ++mi;
        }
        prev = cur;
      }

      std::size_t all_near = 0;
      for (std::size_t r = 0; r < frame.cloud.rows(); ++r) {
        Vec3 p(frame.cloud(r, 0), frame.cloud(r, 1), frame.cloud(r, 2));
        all_near += (p - frame.gt.center).norm() < kNearRadius;
      }
      for (auto r : res.masks[0]) {
        Vec3 p(frame.cloud(r, 0), frame.cloud(r, 1), frame.cloud(r, 2));
        observed_near += (p - frame.gt.center).norm() < kNearRadius;
      }
      null_frames.emplace_back(
          static_cast<double>(all_near) / static_cast<double>(frame.cloud.rows()),
          res.masks[0].size());
      ++frames_total;
    }
  }

  // exact Poisson-binomial upper tail P(X >= observed) under the random-
  // selection null (90 Bernoulli picks per frame at that frame's near
  // fraction); one-sided test at 0.05
  std::size_t trials = 0;
  for (const auto& [f, k] : null_frames) trials += k;
  std::vector<double> dist = {1.0};
  double expected = 0;
  for (const auto& [f, k] : null_frames) {
    expected += f * static_cast<double>(k);
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<double> next(dist.size() + 1, 0.0);
      for (std::size_t i = 0; i < dist.size(); ++i) {
        next[i] += dist[i] * (1.0 - f);
        next[i + 1] += dist[i] * f;
      }
      dist = std::move(next);
    }
  }
  double p_tail = 0;
  for (std::size_t i = std::min(observed_near, trials); i <= trials; ++i) p_tail += dist[i];

  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "90/9000 per iteration, exact contraction; %zu of %zu touched points within "
                "%.2fm of the gt center vs %.1f expected at random, p = %.2e",
                observed_near, trials, kNearRadius, expected, p_tail);
  detail = buf;
  return frames_total == 20 && p_tail < 0.05;
}

// ---------------------------------------------------------------- check 6

std::string pipeline_fingerprint(const std::filesystem::path& dir) {
  SynthConfig sc;
  sc.sequences = 8;
  sc.frames_per_sequence = 3;
  sc.points_per_frame = 512;
  sc.keypoint_count = 32;
  sc.train_fraction = 0.5;
  sc.val_fraction = 0.25;
  sc.write_ply = false;
  generate_synthetic(sc, 99, dir);
  auto ds = Dataset::load(dir / "manifest.json");

  PopupConfig mc;
  mc.num_classes = 4;
  mc.keypoint_count = 32;
  mc.local_k = 64;
  mc.posenc_bands = 2;
  mc.global_levels = {{32, 8, {16, 32}}};
  mc.global_mlp = {64};
  mc.center_head = {32};
  mc.local_level = {16, 8, {16, 32}};
  mc.propagation_neighbors = 2;
  mc.decoder_mlp = {32, 32};
  mc.class_head = true;
  mc.class_mlp = {16};

  TrainConfig tc;
  tc.epochs = 3;
  tc.warmup_epochs_gt_center = 2;
  tc.lr_decay_epochs = {};
  tc.alpha = 100.0;
  tc.batch_size = 4;
  tc.train_points = 256;
  tc.seed = 5;

  auto run = train(tc, mc, build_samples(ds, "train", tc.train_points),
                   build_samples(ds, "val", tc.train_points), ds.templates());
  auto net = PopupNetwork::from_checkpoint(run.checkpoint);
  auto samples = test_samples(ds);
  auto report = evaluate(samples, ds.templates(), model_predictor(net, ds.templates()),
                         EvalMode::GivenClass, 4);
  return ds.manifest().to_json_string() + "\n" + report.to_json_string();
}

bool check_determinism(const std::filesystem::path& root, std::string& detail) {
  auto a = pipeline_fingerprint(root / "det_a");
  auto b = pipeline_fingerprint(root / "det_b");
  detail = "generate->train->eval fingerprints " + std::string(a == b ? "identical" : "differ");
  return a == b;
}

// ---------------------------------------------------------------- check 7

bool check_permutation_invariance(const std::filesystem::path& dir, const Checkpoint& ckpt,
                                  std::string& detail) {
  auto net = PopupNetwork::from_checkpoint(ckpt);
  auto ds = Dataset::load(dir / "manifest.json");
  auto samples = test_samples(ds);

  double worst = 0;
  std::size_t frames = 0;
  Rng rng(404);
  for (const auto& s : samples) {
    if (frames == 10) break;
    ++frames;
    std::size_t cls = s.gt_class;
    auto base = popup_single(s.cloud, cls, net, ds.template_for_class(cls));
    for (int p = 0; p < 20; ++p) {
      std::vector<std::size_t> perm(s.cloud.rows());
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
      Matrix shuffled(s.cloud.rows(), 3);
      for (std::size_t r = 0; r < s.cloud.rows(); ++r)
        for (std::size_t c = 0; c < 3; ++c) shuffled(r, c) = s.cloud(perm[r], c);
      auto est = popup_single(shuffled, cls, net, ds.template_for_class(cls));

      worst = std::max(worst, (est.transform.R - base.transform.R).norm());
      worst = std::max(worst, (est.transform.t - base.transform.t).norm());
      worst = std::max(worst, (est.center - base.center).norm());
      for (std::size_t i = 0; i < base.posed_keypoints.size(); ++i)
        worst = std::max(worst, (est.posed_keypoints[i] - base.posed_keypoints[i]).norm());
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max deviation %.2e over 20 permutations x %zu frames", worst,
                frames);
  detail = buf;
  return frames == 10 && worst < 1e-9;
}

}  // namespace

int main() {
  auto root = std::filesystem::temp_directory_path() / "popup_acceptance";
  std::filesystem::remove_all(root);
  std::filesystem::create_directories(root);
  auto data_dir = root / "e2e_data";

  int failures = 0;
  auto run_check = [&](const std::string& name, const std::function<bool(std::string&)>& fn) {
    auto t0 = Clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    report(name, ok, seconds_since(t0), detail);
    failures += ok ? 0 : 1;
  };

  run_check("rigid fit and metric oracles", check_rigid_fit_oracles);
  run_check("finite-difference gradients", check_gradients);

  Checkpoint seed1_model;
  run_check("synthetic end-to-end orderings", [&](std::string& d) {
    return check_end_to_end(data_dir, d, &seed1_model);
  });
  run_check("trajectory smoothing", check_smoothing);
  run_check("saliency contract",
            [&](std::string& d) { return check_saliency(seed1_model, d); });
  run_check("pipeline determinism", [&](std::string& d) { return check_determinism(root, d); });
  run_check("permutation invariance", [&](std::string& d) {
    return check_permutation_invariance(data_dir, seed1_model, d);
  });

  std::filesystem::remove_all(root);
  return failures;
}
