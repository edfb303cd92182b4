#include "popup/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace popup {

using ad::Matrix;
using ad::Var;

void TrainConfig::validate() const {
  if (epochs == 0) throw DataError("train config: epochs must be positive");
  if (epochs <= warmup_epochs_gt_center && warmup_epochs_gt_center > 0)
    throw DataError("train config: epochs must exceed warmup");
  for (auto e : lr_decay_epochs)
    if (e >= epochs) throw DataError("train config: decay epoch beyond training length");
  if (alpha <= 0) throw DataError("train config: alpha must be positive");
  if (lr <= 0) throw DataError("train config: lr must be positive");
  if (batch_size == 0) throw DataError("train config: batch size must be positive");
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
  double out = lr;
  for (auto e : lr_decay_epochs)
    if (epoch >= e) out /= lr_decay_factor;
  return out;
}

std::string TrainConfig::to_json_string() const {
  nlohmann::json j{{"epochs", epochs},
                   {"lr", lr},
                   {"lr_decay_epochs", lr_decay_epochs},
                   {"lr_decay_factor", lr_decay_factor},
                   {"warmup_epochs_gt_center", warmup_epochs_gt_center},
                   {"alpha", alpha},
                   {"batch_size", batch_size},
                   {"seed", seed},
                   {"aug_translation", aug_translation},
                   {"aug_rotation_deg", aug_rotation_deg},
                   {"train_points", train_points},
                   {"validate_each_epoch", validate_each_epoch}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json_string(const std::string& s) {
  auto j = nlohmann::json::parse(s);
  TrainConfig c;
  if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
  if (j.contains("lr")) j.at("lr").get_to(c.lr);
  if (j.contains("lr_decay_epochs")) j.at("lr_decay_epochs").get_to(c.lr_decay_epochs);
  if (j.contains("lr_decay_factor")) j.at("lr_decay_factor").get_to(c.lr_decay_factor);
  if (j.contains("warmup_epochs_gt_center"))
    j.at("warmup_epochs_gt_center").get_to(c.warmup_epochs_gt_center);
  if (j.contains("alpha")) j.at("alpha").get_to(c.alpha);
  if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("aug_translation")) j.at("aug_translation").get_to(c.aug_translation);
  if (j.contains("aug_rotation_deg")) j.at("aug_rotation_deg").get_to(c.aug_rotation_deg);
  if (j.contains("train_points")) j.at("train_points").get_to(c.train_points);
  if (j.contains("validate_each_epoch"))
    j.at("validate_each_epoch").get_to(c.validate_each_epoch);
  return c;
}

std::string EpochLog::to_json_line() const {
  nlohmann::json j{{"epoch", epoch},
                   {"loss_total", loss_total},
                   {"loss_center", loss_center},
                   {"loss_offset", loss_offset},
                   {"loss_class", loss_class},
                   {"lr", lr},
                   {"wall_seconds", wall_seconds}};
  if (val_center_error >= 0) j["val_center_error"] = val_center_error;
  return j.dump();
}

double loss_center(const Vec3& pred, const Vec3& gt) { return (pred - gt).squaredNorm(); }

double loss_offset(const Matrix& pred, const Matrix& gt) {
  if (!pred.same_shape(gt)) throw DataError("loss_offset: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = pred.at(i) - gt.at(i);
    s += d * d;
  }
  return s;
}

double total_loss(double l_center, double l_offset, std::optional<double> l_class, double alpha) {
  return l_center + alpha * l_offset + (l_class ? *l_class : 0.0);
}

TrainSample augment_sample(const TrainSample& sample, double translation_range,
                           double rotation_range_deg, Rng& rng) {
  TrainSample out = sample;
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  if (axis.norm() < 1e-12) axis = Vec3(0, 1, 0);
  double angle = rng.uniform(-1.0, 1.0) * rotation_range_deg * M_PI / 180.0;
  Mat3 r = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  Vec3 v(rng.uniform(-translation_range, translation_range),
         rng.uniform(-translation_range, translation_range),
         rng.uniform(-translation_range, translation_range));
  if (rotation_range_deg == 0.0) r = Mat3::Identity();

  // one rigid motion of the whole scene, pivoted at the object center,
  // applied to the cloud and the labels alike
  const Vec3 c = sample.gt_center;
  out.cloud = Matrix(sample.cloud.rows(), 3);
  for (std::size_t i = 0; i < sample.cloud.rows(); ++i) {
    Vec3 p(sample.cloud(i, 0), sample.cloud(i, 1), sample.cloud(i, 2));
    p = r * (p - c) + c + v;
    out.cloud(i, 0) = p.x();
    out.cloud(i, 1) = p.y();
    out.cloud(i, 2) = p.z();
  }
  for (auto& kp : out.gt_keypoints) kp = r * (kp - c) + c + v;
  out.gt_center = c + v;
  return out;
}

Matrix subsample_cloud_stride(const Matrix& cloud, std::size_t m) {
  if (m == 0 || m >= cloud.rows()) return cloud;
  double stride = static_cast<double>(cloud.rows()) / static_cast<double>(m);
  Matrix out(m, 3);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t src = static_cast<std::size_t>(std::floor(static_cast<double>(i) * stride));
    for (std::size_t c = 0; c < 3; ++c) out(i, c) = cloud(src, c);
  }
  return out;
}

std::vector<TrainSample> build_samples(const Dataset& dataset, const std::string& split,
                                       std::size_t train_points) {
  std::vector<TrainSample> samples;
  for (auto si : dataset.sequence_indices(split)) {
    auto seq = dataset.load_sequence(si);
    for (std::size_t f = 0; f < seq.clouds.size(); ++f) {
      TrainSample s;
      s.cloud = subsample_cloud_stride(seq.clouds[f], train_points);
      s.class_id = seq.meta.class_id;
      s.gt_center = seq.gt[f].center;
      s.gt_keypoints = dataset.gt_keypoints(seq, f);
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

namespace {

Matrix vec3_to_row(const Vec3& v) {
  Matrix m(1, 3);
  m(0, 0) = v.x();
  m(0, 1) = v.y();
  m(0, 2) = v.z();
  return m;
}

struct SampleLoss {
  Var total;
  double center = 0, offset = 0, cls = 0;
};

SampleLoss sample_loss(const PopupNetwork& net, const TrainSample& sample,
                       const Matrix& keypoints, bool use_gt_center, double alpha) {
  std::optional<Vec3> override_center;
  if (use_gt_center) override_center = sample.gt_center;
  auto fwd = net.forward(sample.cloud, sample.class_id, keypoints, override_center);

  Var l_center = ad::sum_squares(ad::sub(fwd.center, Var::leaf(vec3_to_row(sample.gt_center))));

  Var l_task;
  if (net.config().direct_rt) {
    Matrix gt_kp = points_to_matrix(sample.gt_keypoints);
    l_task = ad::sum_squares(ad::sub(fwd.rt_posed_keypoints, Var::leaf(std::move(gt_kp))));
  } else if (use_gt_center) {
    // warm-up: the target is built from the ground-truth center, a constant
    Matrix gt_off(keypoints.rows(), 3);
    const Vec3& cu = fwd.center_used;
    for (std::size_t i = 0; i < keypoints.rows(); ++i) {
      gt_off(i, 0) = sample.gt_keypoints[i].x() - (keypoints(i, 0) + cu.x());
      gt_off(i, 1) = sample.gt_keypoints[i].y() - (keypoints(i, 1) + cu.y());
      gt_off(i, 2) = sample.gt_keypoints[i].z() - (keypoints(i, 2) + cu.z());
    }
    l_task = ad::sum_squares(ad::sub(fwd.offsets, Var::leaf(std::move(gt_off))));
  } else {
    // joint phase: the target depends on the regressed center, which stays
    // in the graph, so the task loss supervises the center as well
    Matrix gt_rel(keypoints.rows(), 3);
    for (std::size_t i = 0; i < keypoints.rows(); ++i) {
      gt_rel(i, 0) = sample.gt_keypoints[i].x() - keypoints(i, 0);
      gt_rel(i, 1) = sample.gt_keypoints[i].y() - keypoints(i, 1);
      gt_rel(i, 2) = sample.gt_keypoints[i].z() - keypoints(i, 2);
    }
    l_task = ad::sum_squares(
        ad::sub(ad::add(fwd.offsets, fwd.center), Var::leaf(std::move(gt_rel))));
  }

  SampleLoss out;
  Var total = ad::add(l_center, ad::scale(l_task, alpha));
  if (net.config().class_head) {
    Var l_cls = ad::cross_entropy_logits(fwd.class_logits, sample.class_id);
    total = ad::add(total, l_cls);
    out.cls = l_cls.value()(0, 0);
  }
  out.total = total;
  out.center = l_center.value()(0, 0);
  out.offset = l_task.value()(0, 0);
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& config, const PopupConfig& model_config,
                  const std::vector<TrainSample>& train_set,
                  const std::vector<TrainSample>& val_set,
                  const std::vector<ObjectTemplate>& templates,
                  const std::optional<std::filesystem::path>& log_path) {
  config.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  for (const auto& s : train_set)
    if (s.class_id >= model_config.num_classes)
      throw DataError("train: sample class id out of range");

  std::vector<Matrix> class_keypoints(model_config.num_classes);
  for (const auto& t : templates)
    if (t.class_id < model_config.num_classes)
      class_keypoints[t.class_id] = points_to_matrix(t.keypoints);

  PopupNetwork net = PopupNetwork::init(model_config, Rng::derive(config.seed, 0xC0FFEE));
  ad::AdamState adam;

  std::ofstream log_stream;
  if (log_path) {
    log_stream.open(*log_path, std::ios::trunc);
    if (!log_stream) throw DataError("train: cannot open log file " + log_path->string());
  }

  TrainResult result;
  Checkpoint last_good = net.to_checkpoint();

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double lr = config.learning_rate_at(epoch);
    bool warmup = epoch < config.warmup_epochs_gt_center;

    // deterministic shuffle per (seed, epoch)
    Rng shuffle_rng(Rng::derive(config.seed, epoch, 0x5u));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(shuffle_rng.uniform_index(i));
      std::swap(order[i - 1], order[j]);
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    bool nan_hit = false;

    std::size_t batch_fill = 0;
    for (std::size_t step = 0; step < order.size() && !nan_hit; ++step) {
      std::size_t idx = order[step];
      Rng aug_rng(Rng::derive(config.seed, epoch, 0x10000 + idx));
      TrainSample aug = augment_sample(train_set[idx], config.aug_translation,
                                       config.aug_rotation_deg, aug_rng);

      auto loss = sample_loss(net, aug, class_keypoints[aug.class_id], warmup, config.alpha);
      double lv = loss.total.value()(0, 0);
      if (!std::isfinite(lv)) {
        nan_hit = true;
        break;
      }
      log.loss_total += lv;
      log.loss_center += loss.center;
      log.loss_offset += loss.offset;
      log.loss_class += loss.cls;

      ad::backward(loss.total, Matrix(1, 1, 1.0 / static_cast<double>(config.batch_size)));
      ++batch_fill;
      if (batch_fill == config.batch_size || step + 1 == order.size()) {
        ad::adam_step(net.parameters(), adam, lr);
        ad::zero_grads(net.parameters());
        batch_fill = 0;
      }
    }

    if (nan_hit) {
      result.diverged = true;
      result.checkpoint = last_good;
      result.completed_epochs = epoch;
      if (log_stream) log_stream << "{\"event\":\"diverged\",\"epoch\":" << epoch << "}\n";
      return result;
    }

    double n = static_cast<double>(order.size());
    log.loss_total /= n;
    log.loss_center /= n;
    log.loss_offset /= n;
    log.loss_class /= n;

    if (config.validate_each_epoch && !val_set.empty()) {
      double ec = 0;
      for (const auto& s : val_set) {
        auto fwd = net.forward(s.cloud, s.class_id, class_keypoints[s.class_id]);
        Vec3 pred(fwd.center.value()(0, 0), fwd.center.value()(0, 1), fwd.center.value()(0, 2));
        ec += (pred - s.gt_center).norm();
      }
      log.val_center_error = ec / static_cast<double>(val_set.size());
    }

    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);
    if (log_stream) log_stream << log.to_json_line() << std::endl;

    last_good = net.to_checkpoint();
    result.completed_epochs = epoch + 1;
  }

  result.checkpoint = net.to_checkpoint();
  result.checkpoint.adam_step = adam.step;
  // persist optimizer moments alongside the parameters
  if (!adam.first_moment.empty()) {
    std::size_t i = 0;
    for (const auto& p : net.parameters()) {
      result.checkpoint.tensors.emplace("adam.m." + p.name(), adam.first_moment[i]);
      result.checkpoint.tensors.emplace("adam.v." + p.name(), adam.second_moment[i]);
      ++i;
    }
  }
  return result;
}

}  // namespace popup
