#include "popup/model.hpp"

#include <cmath>
#include <map>

#include "popup/rng.hpp"

namespace popup {

using ad::Matrix;
using ad::Var;

namespace {

constexpr double kPi = 3.14159265358979323846;

bool has_nonfinite(const Matrix& m) {
  for (std::size_t i = 0; i < m.size(); ++i)
    if (!std::isfinite(m.at(i))) return true;
  return false;
}

PointCloud cloud_from_matrix(const Matrix& m) {
  PointCloud pc;
  pc.points.reserve(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) pc.points.emplace_back(m(r, 0), m(r, 1), m(r, 2));
  return pc;
}

Var onehot_leaf(std::size_t class_id, std::size_t num_classes) {
  if (class_id >= num_classes) throw ad::AdError("class index out of range");
  Matrix m(1, num_classes);
  m(0, class_id) = 1.0;
  return Var::leaf(std::move(m));
}

/// Indices of rows with distinct coordinates, keeping the first occurrence.
std::vector<std::size_t> unique_row_indices(const Matrix& m) {
  std::map<std::array<double, 3>, std::size_t> seen;
  std::vector<std::size_t> keep;
  keep.reserve(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::array<double, 3> key{m(r, 0), m(r, 1), m(r, 2)};
    if (seen.emplace(key, r).second) keep.push_back(r);
  }
  return keep;
}

}  // namespace

ClassEncoding ClassEncoding::make(std::size_t class_id, std::size_t num_classes) {
  ClassEncoding e;
  e.one_hot.assign(num_classes, 0.0);
  if (class_id >= num_classes) throw ad::AdError("ClassEncoding: class index out of range");
  e.one_hot[class_id] = 1.0;
  return e;
}

std::size_t ClassEncoding::index() const {
  for (std::size_t i = 0; i < one_hot.size(); ++i)
    if (one_hot[i] == 1.0) return i;
  throw ad::AdError("ClassEncoding: no active entry");
}

Matrix points_to_matrix(const std::vector<Vec3>& pts) {
  Matrix m(pts.size(), 3);
  for (std::size_t r = 0; r < pts.size(); ++r) {
    m(r, 0) = pts[r].x();
    m(r, 1) = pts[r].y();
    m(r, 2) = pts[r].z();
  }
  return m;
}

std::vector<Vec3> matrix_to_points(const Matrix& m) {
  if (m.cols() != 3) throw ad::AdError("matrix_to_points: expected 3 columns");
  std::vector<Vec3> pts;
  pts.reserve(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) pts.emplace_back(m(r, 0), m(r, 1), m(r, 2));
  return pts;
}

Matrix positional_encoding(const Matrix& points, std::size_t bands) {
  Matrix out(points.rows(), 3 + 6 * bands);
  for (std::size_t r = 0; r < points.rows(); ++r) {
    std::size_t c = 0;
    for (int a = 0; a < 3; ++a) out(r, c++) = points(r, static_cast<std::size_t>(a));
    for (std::size_t b = 0; b < bands; ++b) {
      double freq = std::pow(2.0, static_cast<double>(b)) * kPi;
      for (int a = 0; a < 3; ++a) {
        double v = freq * points(r, static_cast<std::size_t>(a));
        out(r, c++) = std::sin(v);
        out(r, c++) = std::cos(v);
      }
    }
  }
  return out;
}

PopupNetwork PopupNetwork::init(const PopupConfig& config, std::uint64_t seed) {
  if (config.no_local_features && config.class_head_use_local)
    throw ad::AdError("config: class_head_use_local requires local features");

  PopupNetwork net;
  net.config_ = config;
  Rng rng(seed);

  auto linear = [&](const std::string& name, std::size_t in, std::size_t out,
                    double gain = 1.0) {
    double s = gain * std::sqrt(6.0 / static_cast<double>(in));
    Matrix w(in, out);
    for (std::size_t i = 0; i < w.size(); ++i) w.at(i) = rng.uniform(-s, s);
    Var wv = Var::leaf(std::move(w), true, name + ".W");
    Var bv = Var::leaf(Matrix(1, out), true, name + ".b");
    net.params_.push_back(wv);
    net.params_.push_back(bv);
    net.by_name_.emplace(name + ".W", wv);
    net.by_name_.emplace(name + ".b", bv);
  };
  auto mlp = [&](const std::string& prefix, std::size_t in,
                 const std::vector<std::size_t>& widths) {
    for (std::size_t j = 0; j < widths.size(); ++j) {
      linear(prefix + ".m" + std::to_string(j), in, widths[j]);
      in = widths[j];
    }
    return in;
  };

  // global encoder: hierarchical set abstraction over centroid-relative coords
  std::size_t feat = 0;
  for (std::size_t i = 0; i < config.global_levels.size(); ++i) {
    feat = mlp("global.l" + std::to_string(i), 6 + feat, config.global_levels[i].mlp);
  }
  std::size_t fg = mlp("global.head", feat + 3, config.global_mlp);
  std::size_t ch = mlp("center", fg, config.center_head);
  linear("center.out", ch, 3, 0.01);

  std::size_t fl = config.local_feature_dim();
  if (!config.no_local_features && (!config.direct_rt || config.class_head_use_local)) {
    mlp("local.l0", 6, config.local_level.mlp);
  }

  if (config.direct_rt) {
    std::size_t in = fg + config.num_classes;
    std::size_t h = mlp("rt", in, config.rt_mlp);
    linear("rt.out", h, 9, 0.01);
  } else {
    std::size_t in =
        config.posenc_dim() + (config.no_local_features ? 0 : fl) + fg + config.num_classes;
    std::size_t h = mlp("decoder", in, config.decoder_mlp);
    linear("decoder.out", h, 3, 0.01);
  }

  if (config.class_head) {
    std::size_t in = fg + (config.class_head_use_local ? fl : 0);
    std::size_t h = mlp("class", in, config.class_mlp);
    linear("class.out", h, config.num_classes);
  }
  return net;
}

Var PopupNetwork::param(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ad::AdError("unknown parameter: " + name);
  return it->second;
}

std::size_t PopupNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value().size();
  return n;
}

Var PopupNetwork::run_mlp(const std::string& prefix, const Var& input, std::size_t hidden_layers,
                          bool has_out) const {
  Var x = input;
  for (std::size_t j = 0; j < hidden_layers; ++j) {
    std::string name = prefix + ".m" + std::to_string(j);
    x = ad::relu(ad::add(ad::matmul(x, param(name + ".W")), param(name + ".b")));
  }
  if (has_out) x = ad::add(ad::matmul(x, param(prefix + ".out.W")), param(prefix + ".out.b"));
  return x;
}

Var PopupNetwork::run_set_abstraction(const std::string& prefix, const SetAbstractionLevel& level,
                                      const Var& positions, const Var& features,
                                      Var* out_positions) const {
  const std::size_t n = positions.rows();
  const std::size_t g = std::min(level.centers, n);
  const std::size_t k = std::min(level.neighbors, n);

  PointCloud pc = cloud_from_matrix(positions.value());
  auto center_idx = farthest_point_sample_from(pc, g, canonical_start_index(pc));

  std::vector<std::size_t> flat_idx;
  std::vector<std::size_t> flat_center_idx;
  flat_idx.reserve(g * k);
  flat_center_idx.reserve(g * k);
  for (std::size_t ci : center_idx) {
    auto nbrs = knn_indices(pc, pc.points[ci], k);
    flat_idx.insert(flat_idx.end(), nbrs.begin(), nbrs.end());
    flat_center_idx.insert(flat_center_idx.end(), k, ci);
  }

  Var nb_pos = ad::gather_rows(positions, flat_idx);
  Var ct_pos = ad::gather_rows(positions, flat_center_idx);
  Var rel = ad::sub(nb_pos, ct_pos);

  std::vector<Var> parts{rel, ct_pos};
  if (features.valid()) parts.push_back(ad::gather_rows(features, flat_idx));
  Var x = run_mlp(prefix, ad::concat_cols(parts), level.mlp.size(), false);
  if (out_positions) *out_positions = ad::gather_rows(positions, center_idx);
  return ad::group_colmax(x, g);
}

PopupNetwork::GlobalOut PopupNetwork::run_global(const Var& cloud_var) const {
  const std::size_t n = cloud_var.rows();
  if (n == 0) throw ad::AdError("encode_global: empty cloud");

  Var centroid = ad::scale(ad::colsum(cloud_var), 1.0 / static_cast<double>(n));
  Var pos = ad::sub(cloud_var, centroid);  // centroid-relative frame

  Var feat;
  for (std::size_t i = 0; i < config_.global_levels.size(); ++i) {
    Var next_pos;
    feat = run_set_abstraction("global.l" + std::to_string(i), config_.global_levels[i], pos, feat,
                               &next_pos);
    pos = next_pos;
  }

  Var pooled = ad::colmax(ad::concat_cols({feat, pos}));
  Var f_global = run_mlp("global.head", pooled, config_.global_mlp.size(), false);
  Var delta = run_mlp("center", f_global, config_.center_head.size(), true);
  Var center = ad::add(delta, centroid);

  if (has_nonfinite(center.value()) || has_nonfinite(f_global.value()))
    throw ad::AdError("encode_global: non-finite activation in global encoder");
  return {center, f_global};
}

Var PopupNetwork::run_local(const Var& cloud_var, const Var& center_used,
                            const ad::Matrix& keypoints,
                            std::vector<std::size_t>* local_indices_out) const {
  if (config_.no_local_features)
    throw ad::AdError("encode_local: local features disabled by config");
  const std::size_t n = cloud_var.rows();
  if (n == 0) throw ad::AdError("encode_local: empty local cloud");
  const std::size_t m = keypoints.rows();

  Vec3 center(center_used.value()(0, 0), center_used.value()(0, 1), center_used.value()(0, 2));
  PointCloud pc = cloud_from_matrix(cloud_var.value());
  auto local_idx = knn_indices(pc, center, std::min<std::size_t>(config_.local_k, n));
  if (local_indices_out) *local_indices_out = local_idx;

  // key points and neighborhood as one point cloud in the ô-centered frame
  Var kp_leaf = Var::leaf(keypoints);
  Var local_rel = ad::sub(ad::gather_rows(cloud_var, local_idx), center_used);
  Var union_pos = ad::concat_rows({kp_leaf, local_rel});

  // exact duplicates contribute nothing under max pooling; drop them so the
  // grouping sees each position once
  auto keep = unique_row_indices(union_pos.value());
  if (keep.size() != union_pos.rows()) union_pos = ad::gather_rows(union_pos, keep);

  Var center_pos;
  Var center_feat = run_set_abstraction("local.l0", config_.local_level, union_pos, Var(),
                                        &center_pos);

  // inverse-distance interpolation of the abstraction-level features back to
  // the key-point locations; the weights stay inside the graph
  const std::size_t nn = std::min<std::size_t>(config_.propagation_neighbors,
                                               center_pos.rows());
  PointCloud centers_pc = cloud_from_matrix(center_pos.value());
  std::vector<std::vector<std::size_t>> prop_idx(nn, std::vector<std::size_t>(m));
  for (std::size_t i = 0; i < m; ++i) {
    Vec3 q(keypoints(i, 0), keypoints(i, 1), keypoints(i, 2));
    auto nbrs = knn_indices(centers_pc, q, nn);
    for (std::size_t j = 0; j < nn; ++j) prop_idx[j][i] = nbrs[j];
  }

  Var ones = Var::leaf(Matrix(m, 1, 1.0));
  std::vector<Var> inv_dists;
  std::vector<Var> feats;
  Var weight_sum;
  for (std::size_t j = 0; j < nn; ++j) {
    Var cj = ad::gather_rows(center_pos, prop_idx[j]);
    Var diff = ad::sub(kp_leaf, cj);
    Var d = ad::sqrt(ad::add_const(ad::rowsum(ad::mul(diff, diff)), 1e-12));
    Var inv = ad::div(ones, d);
    inv_dists.push_back(inv);
    feats.push_back(ad::gather_rows(center_feat, prop_idx[j]));
    weight_sum = j == 0 ? inv : ad::add(weight_sum, inv);
  }
  Var f_local;
  for (std::size_t j = 0; j < nn; ++j) {
    Var w = ad::div(inv_dists[j], weight_sum);
    Var contrib = ad::mul(feats[j], w);  // column broadcast
    f_local = j == 0 ? contrib : ad::add(f_local, contrib);
  }
  return f_local;
}

Var PopupNetwork::run_local_pooled(const Var& cloud_var, const Var& center_used) const {
  if (config_.no_local_features)
    throw ad::AdError("run_local_pooled: local features disabled by config");
  const std::size_t n = cloud_var.rows();
  Vec3 center(center_used.value()(0, 0), center_used.value()(0, 1), center_used.value()(0, 2));
  PointCloud pc = cloud_from_matrix(cloud_var.value());
  auto local_idx = knn_indices(pc, center, std::min<std::size_t>(config_.local_k, n));
  Var local_rel = ad::sub(ad::gather_rows(cloud_var, local_idx), center_used);
  Var center_feat = run_set_abstraction("local.l0", config_.local_level, local_rel, Var(),
                                        nullptr);
  return ad::colmax(center_feat);
}

Var PopupNetwork::run_decoder(const ad::Matrix& keypoints, const Var& f_local,
                              const Var& f_global, std::size_t class_id) const {
  const std::size_t m = keypoints.rows();
  Var pe = Var::leaf(positional_encoding(keypoints, config_.posenc_bands));
  std::vector<Var> parts{pe};
  if (!config_.no_local_features) {
    if (!f_local.valid()) throw ad::AdError("decode_offsets: missing local features");
    parts.push_back(f_local);
  }
  parts.push_back(ad::tile_rows(f_global, m));
  parts.push_back(ad::tile_rows(onehot_leaf(class_id, config_.num_classes), m));
  Var offsets = run_mlp("decoder", ad::concat_cols(parts), config_.decoder_mlp.size(), true);
  if (has_nonfinite(offsets.value()))
    throw ad::AdError("decode_offsets: non-finite activation in offset decoder");
  return offsets;
}

Var PopupNetwork::run_class_head(const Var& f_global, const Var& f_local_pooled) const {
  if (!config_.class_head) throw ad::AdError("predict_class: class head disabled by config");
  Var input = f_global;
  if (config_.class_head_use_local) {
    if (!f_local_pooled.valid())
      throw ad::AdError("predict_class: missing pooled local features");
    input = ad::concat_cols({f_global, f_local_pooled});
  }
  return run_mlp("class", input, config_.class_mlp.size(), true);
}

PopupNetwork::RtOut PopupNetwork::run_rt_head(const Var& f_global, std::size_t class_id,
                                              const Var& center_used,
                                              const ad::Matrix& keypoints) const {
  if (!config_.direct_rt) throw ad::AdError("direct_rt_head: disabled by config");
  // the ablation replaces the whole local/offset machinery: the pose comes
  // from the global encoding alone
  std::vector<Var> parts{f_global};
  parts.push_back(onehot_leaf(class_id, config_.num_classes));
  Var raw = run_mlp("rt", ad::concat_cols(parts), config_.rt_mlp.size(), true);

  // 6D rotation, residual around the identity so zero output is identity
  Var ex = Var::leaf(Matrix(1, 3, std::vector<double>{1, 0, 0}));
  Var ey = Var::leaf(Matrix(1, 3, std::vector<double>{0, 1, 0}));
  Var a = ad::add(ad::slice_cols(raw, 0, 3), ex);
  Var b = ad::add(ad::slice_cols(raw, 3, 3), ey);
  Var t_off = ad::slice_cols(raw, 6, 3);

  Var r1 = ad::div(a, ad::sqrt(ad::add_const(ad::sum_squares(a), 1e-12)));
  Var proj = ad::mul(r1, ad::sum(ad::mul(b, r1)));
  Var b2 = ad::sub(b, proj);
  Var r2 = ad::div(b2, ad::sqrt(ad::add_const(ad::sum_squares(b2), 1e-12)));

  auto comp = [](const Var& v, std::size_t i) { return ad::slice_cols(v, i, 1); };
  Var r3 = ad::concat_cols({
      ad::sub(ad::mul(comp(r1, 1), comp(r2, 2)), ad::mul(comp(r1, 2), comp(r2, 1))),
      ad::sub(ad::mul(comp(r1, 2), comp(r2, 0)), ad::mul(comp(r1, 0), comp(r2, 2))),
      ad::sub(ad::mul(comp(r1, 0), comp(r2, 1)), ad::mul(comp(r1, 1), comp(r2, 0))),
  });

  // rows r1,r2,r3 form Rᵀ, so K·Rᵀ poses each key point by R
  Var r_transpose = ad::concat_rows({r1, r2, r3});
  Var posed = ad::add(ad::matmul(Var::leaf(keypoints), r_transpose),
                      ad::add(center_used, t_off));
  return {raw, posed};
}

ForwardResult PopupNetwork::forward(const ad::Matrix& cloud, std::size_t class_id,
                                    const ad::Matrix& keypoints,
                                    const std::optional<Vec3>& center_override,
                                    bool watch_input) const {
  if (class_id >= config_.num_classes) throw ad::AdError("forward: class index out of range");
  if (cloud.rows() == 0 || cloud.cols() != 3) throw ad::AdError("forward: cloud must be N×3");

  ForwardResult out;
  out.cloud = Var::leaf(cloud, watch_input, "input_cloud");
  GlobalOut g = run_global(out.cloud);
  out.center = g.center;
  out.global_features = g.features;

  Var center_used_var;
  if (center_override) {
    Matrix c(1, 3);
    c(0, 0) = center_override->x();
    c(0, 1) = center_override->y();
    c(0, 2) = center_override->z();
    center_used_var = Var::leaf(std::move(c));
    out.center_used = *center_override;
  } else {
    center_used_var = g.center;
    out.center_used = Vec3(g.center.value()(0, 0), g.center.value()(0, 1), g.center.value()(0, 2));
  }

  Var f_local_pooled;
  if (!config_.no_local_features && !config_.direct_rt) {
    out.local_features = run_local(out.cloud, center_used_var, keypoints, &out.local_indices);
    if (config_.class_head_use_local) f_local_pooled = ad::colmax(out.local_features);
  }

  if (config_.direct_rt) {
    auto rt = run_rt_head(g.features, class_id, center_used_var, keypoints);
    out.rt_params = rt.params;
    out.rt_posed_keypoints = rt.posed_keypoints;
  } else {
    out.offsets = run_decoder(keypoints, out.local_features, g.features, class_id);
  }

  if (config_.class_head) {
    Var pooled_for_class;
    if (config_.class_head_use_local) {
      pooled_for_class = f_local_pooled.valid()
                             ? f_local_pooled
                             : run_local_pooled(out.cloud, center_used_var);
    }
    out.class_logits = run_class_head(g.features, pooled_for_class);
  }
  return out;
}

std::pair<Vec3, std::vector<double>> PopupNetwork::encode_global(const PointCloud& cloud) const {
  if (cloud.empty()) throw ad::AdError("encode_global: empty cloud");
  Var leaf = Var::leaf(points_to_matrix(cloud.points));
  GlobalOut g = run_global(leaf);
  Vec3 center(g.center.value()(0, 0), g.center.value()(0, 1), g.center.value()(0, 2));
  return {center, g.features.value().vec()};
}

std::vector<double> PopupNetwork::predict_class(const ad::Matrix& cloud) const {
  Var leaf = Var::leaf(cloud);
  GlobalOut g = run_global(leaf);
  Var pooled;
  if (config_.class_head_use_local) pooled = run_local_pooled(leaf, g.center);
  Var logits = run_class_head(g.features, pooled);
  return ad::softmax(logits).value().vec();
}

RigidTransform PopupNetwork::rt_params_to_transform(const std::vector<double>& params9,
                                                    const Vec3& center_used) {
  if (params9.size() != 9) throw ad::AdError("rt_params_to_transform: expected 9 values");
  Vec3 a(1.0 + params9[0], params9[1], params9[2]);
  Vec3 b(params9[3], 1.0 + params9[4], params9[5]);
  Vec3 r1 = a / std::sqrt(a.squaredNorm() + 1e-12);
  Vec3 b2 = b - r1 * b.dot(r1);
  Vec3 r2 = b2 / std::sqrt(b2.squaredNorm() + 1e-12);
  Vec3 r3 = r1.cross(r2);
  RigidTransform rt;
  rt.R.col(0) = r1;
  rt.R.col(1) = r2;
  rt.R.col(2) = r3;
  rt.t = center_used + Vec3(params9[6], params9[7], params9[8]);
  return rt;
}

Checkpoint PopupNetwork::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config_json = config_.to_json_string();
  ckpt.config_hash = config_.hash();
  for (const auto& [name, var] : by_name_) ckpt.tensors.emplace(name, var.value());
  return ckpt;
}

PopupNetwork PopupNetwork::from_checkpoint(const Checkpoint& ckpt) {
  PopupConfig config = PopupConfig::from_json_string(ckpt.config_json);
  PopupNetwork net = init(config, 0);
  for (auto& [name, var] : net.by_name_) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw ad::AdError("checkpoint missing tensor: " + name);
    if (!it->second.same_shape(var.value()))
      throw ad::AdError("checkpoint tensor shape mismatch: " + name);
    var.mutable_value() = it->second;
  }
  return net;
}

}  // namespace popup
