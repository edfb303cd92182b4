#include "popup/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace popup::ad {

namespace {

std::atomic<std::int64_t> g_next_id{1};

using EMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ECMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

EMap emap(Matrix& m) {
  return EMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}
ECMap emap(const Matrix& m) {
  return ECMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
}

std::shared_ptr<Node> make_node(std::string op, Matrix value,
                                std::vector<std::shared_ptr<Node>> inputs) {
  auto node = std::make_shared<Node>();
  node->id = g_next_id.fetch_add(1);
  node->op = std::move(op);
  node->value = std::move(value);
  node->inputs = std::move(inputs);
  for (const auto& in : node->inputs)
    if (in->needs_grad) node->needs_grad = true;
  return node;
}

[[noreturn]] void shape_error(const std::string& op, const Matrix& a, const Matrix& b) {
  throw AdError(op + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                std::to_string(b.cols()) + ")");
}

enum class Broadcast { Same, Row, Col, Scalar };

Broadcast broadcast_kind(const std::string& op, const Matrix& a, const Matrix& b) {
  if (b.rows() == 1 && b.cols() == 1 && !a.same_shape(b)) return Broadcast::Scalar;
  if (a.same_shape(b)) return Broadcast::Same;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::Col;
  shape_error(op, a, b);
}

double broadcast_at(const Matrix& b, Broadcast kind, std::size_t r, std::size_t c) {
  switch (kind) {
    case Broadcast::Same:
      return b(r, c);
    case Broadcast::Row:
      return b(0, c);
    case Broadcast::Col:
      return b(r, 0);
    default:
      return b(0, 0);
  }
}

void broadcast_accumulate(Matrix& bg, Broadcast kind, std::size_t r, std::size_t c, double g) {
  switch (kind) {
    case Broadcast::Same:
      bg(r, c) += g;
      break;
    case Broadcast::Row:
      bg(0, c) += g;
      break;
    case Broadcast::Col:
      bg(r, 0) += g;
      break;
    default:
      bg(0, 0) += g;
      break;
  }
}

Var unary_elementwise(const Var& a, std::string op, double (*f)(double),
                      double (*df)(double /*x*/, double /*y*/)) {
  Matrix out(a.rows(), a.cols());
  const Matrix& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = f(av.at(i));
  auto node = make_node(std::move(op), std::move(out), {a.node()});
  if (node->needs_grad) {
    node->backward_fn = [df](Node& n) {
      auto& in = *n.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        ig.at(i) += n.grad.at(i) * df(in.value.at(i), n.value.at(i));
    };
  }
  return Var(node);
}

Var binary_elementwise(const Var& a, const Var& b, std::string opname,
                       double (*f)(double, double), double (*dfa)(double, double),
                       double (*dfb)(double, double)) {
  Broadcast kind = broadcast_kind(opname, a.value(), b.value());
  Matrix out(a.rows(), a.cols());
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      out(r, c) = f(av(r, c), broadcast_at(bv, kind, r, c));
  auto node = make_node(std::move(opname), std::move(out), {a.node(), b.node()});
  if (node->needs_grad) {
    node->backward_fn = [kind, dfa, dfb](Node& n) {
      auto& ia = *n.inputs[0];
      auto& ib = *n.inputs[1];
      const Matrix& av2 = ia.value;
      const Matrix& bv2 = ib.value;
      Matrix* ag = ia.needs_grad ? &ia.ensure_grad() : nullptr;
      Matrix* bg = ib.needs_grad ? &ib.ensure_grad() : nullptr;
      for (std::size_t r = 0; r < n.grad.rows(); ++r)
        for (std::size_t c = 0; c < n.grad.cols(); ++c) {
          double g = n.grad(r, c);
          double x = av2(r, c);
          double y = broadcast_at(bv2, kind, r, c);
          if (ag) (*ag)(r, c) += g * dfa(x, y);
          if (bg) broadcast_accumulate(*bg, kind, r, c, g * dfb(x, y));
        }
    };
  }
  return Var(node);
}

}  // namespace

Matrix& Node::ensure_grad() {
  if (grad.empty()) grad = Matrix(value.rows(), value.cols());
  return grad;
}

void Node::accumulate_grad(const Matrix& g) {
  if (!g.same_shape(value)) throw AdError("gradient shape mismatch at node " + op);
  Matrix& mine = ensure_grad();
  for (std::size_t i = 0; i < mine.size(); ++i) mine.at(i) += g.at(i);
}

Var Var::leaf(Matrix value, bool requires_grad, std::string name) {
  auto node = make_node("leaf", std::move(value), {});
  node->requires_grad = requires_grad;
  node->needs_grad = requires_grad;
  node->name = std::move(name);
  return Var(node);
}

Var Var::scalar(double v) { return leaf(Matrix(1, 1, std::vector<double>{v})); }

void backward(const Var& output, const Matrix& output_grad) {
  if (!output.valid()) throw AdError("backward: invalid output");
  Node* root = output.node().get();
  if (!root->needs_grad) return;
  if (!output_grad.same_shape(root->value)) throw AdError("backward: output_grad shape mismatch");

  // collect reachable subgraph; creation ids give the topological order
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      Node* p = in.get();
      if (p->needs_grad && seen.insert(p).second) stack.push_back(p);
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

  root->accumulate_grad(output_grad);
  for (Node* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

void backward(const Var& output) {
  backward(output, Matrix(output.rows(), output.cols(), 1.0));
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
  Matrix out(a.rows(), b.cols());
  emap(out).noalias() = emap(a.value()) * emap(b.value());
  auto node = make_node("matmul", std::move(out), {a.node(), b.node()});
  if (node->needs_grad) {
    node->backward_fn = [](Node& n) {
      auto& ia = *n.inputs[0];
      auto& ib = *n.inputs[1];
      if (ia.needs_grad) emap(ia.ensure_grad()).noalias() += emap(n.grad) * emap(ib.value).transpose();
      if (ib.needs_grad) emap(ib.ensure_grad()).noalias() += emap(ia.value).transpose() * emap(n.grad);
    };
  }
  return Var(node);
}

Var add(const Var& a, const Var& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary_elementwise(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var scale(const Var& a, double c) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.value().at(i) * c;
  auto node = make_node("scale", std::move(out), {a.node()});
  if (node->needs_grad) {
    node->backward_fn = [c](Node& n) {
      auto& in = *n.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) ig.at(i) += c * n.grad.at(i);
    };
  }
  return Var(node);
}

Var add_const(const Var& a, double c) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.value().at(i) + c;
  auto node = make_node("add_const", std::move(out), {a.node()});
  if (node->needs_grad) {
    node->backward_fn = [](Node& n) {
      auto& in = *n.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) ig.at(i) += n.grad.at(i);
    };
  }
  return Var(node);
}

Var relu(const Var& a) {
  return unary_elementwise(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sin(const Var& a) {
  return unary_elementwise(
      a, "sin", [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); });
}

Var cos(const Var& a) {
  return unary_elementwise(
      a, "cos", [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

Var sqrt(const Var& a) {
  return unary_elementwise(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value().at(i);
  auto node = make_node("sum", Matrix(1, 1, std::vector<double>{s}), {a.node()});
  if (node->needs_grad) {
    node->backward_fn = [](Node& n) {
      auto& in = *n.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      double g = n.grad(0, 0);
      for (std::size_t i = 0; i < ig.size(); ++i) ig.at(i) += g;
    };
  }
  return Var(node);
}

Var sum_squares(const Var& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value().at(i) * a.value().at(i);
  auto node = make_node("sum_squares", Matrix(1, 1, std::vector<double>{s}), {a.node()});
  if (node->needs_grad) {
    node->backward_fn = [](Node& n) {
      auto& in = *n.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      double g = n.grad(0, 0);
      for (std::size_t i = 0; i < ig.size(); ++i) ig.at(i) += 2.0 * in.value.at(i) * g;
    };
  }
  return Var(node);
}

Var colsum(const Var& a) {
  Matrix out(1, a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(0, c) += a.value()(r, c);
  auto node = make_node("colsum", std::move(out), {a.node()});
  if (node->needs_grad) {
    node->backward_fn = [](Node& n) {
      auto& in = *n.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      for (std::size_t r = 0; r < ig.rows(); ++r)
        for (std::size_t c = 0; c < ig.cols(); ++c) ig(r, c) += n.grad(0, c);
    };
  }
  return Var(node);
}

Var rowsum(const Var& a) {
  Matrix out(a.rows(), 1);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, 0) += a.value()(r, c);
  auto node = make_node("rowsum", std::move(out), {a.node()});
  if (node->needs_grad) {
    node->backward_fn = [](Node& n) {
      auto& in = *n.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      for (std::size_t r = 0; r < ig.rows(); ++r)
        for (std::size_t c = 0; c < ig.cols(); ++c) ig(r, c) += n.grad(r, 0);
    };
  }
  return Var(node);
}

Var colmax(const Var& a) { return group_colmax(a, 1); }

Var group_colmax(const Var& a, std::size_t groups) {
  if (groups == 0 || a.rows() % groups != 0)
    throw AdError("group_colmax: rows not divisible by groups");
  const std::size_t k = a.rows() / groups;
  Matrix out(groups, a.cols());
  auto argmax = std::make_shared<std::vector<std::size_t>>(groups * a.cols());
  const Matrix& av = a.value();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t c = 0; c < a.cols(); ++c) {
      std::size_t best_row = g * k;
      double best = av(best_row, c);
      for (std::size_t i = 1; i < k; ++i) {
        double v = av(g * k + i, c);
        if (v > best) {
          best = v;
          best_row = g * k + i;
        }
      }
      out(g, c) = best;
      (*argmax)[g * a.cols() + c] = best_row;
    }
  auto node = make_node("group_colmax", std::move(out), {a.node()});
  if (node->needs_grad) {
    node->backward_fn = [argmax](Node& n) {
      auto& in = *n.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      for (std::size_t g = 0; g < n.grad.rows(); ++g)
        for (std::size_t c = 0; c < n.grad.cols(); ++c)
          ig((*argmax)[g * n.grad.cols() + c], c) += n.grad(g, c);
    };
  }
  return Var(node);
}

Var gather_rows(const Var& a, const std::vector<std::size_t>& indices) {
  Matrix out(indices.size(), a.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= a.rows()) throw AdError("gather_rows: index out of range");
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a.value()(indices[r], c);
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(indices);
  auto node = make_node("gather_rows", std::move(out), {a.node()});
  if (node->needs_grad) {
    node->backward_fn = [idx](Node& n) {
      auto& in = *n.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      for (std::size_t r = 0; r < idx->size(); ++r)
        for (std::size_t c = 0; c < n.grad.cols(); ++c) ig((*idx)[r], c) += n.grad(r, c);
    };
  }
  return Var(node);
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw AdError("concat_cols: no parts");
  std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw AdError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, offset + c) = p.value()(r, c);
    offset += p.cols();
  }
  std::vector<std::shared_ptr<Node>> inputs;
  for (const auto& p : parts) inputs.push_back(p.node());
  auto node = make_node("concat_cols", std::move(out), std::move(inputs));
  if (node->needs_grad) {
    node->backward_fn = [](Node& n) {
      std::size_t off = 0;
      for (auto& inp : n.inputs) {
        if (inp->needs_grad) {
          Matrix& ig = inp->ensure_grad();
          for (std::size_t r = 0; r < ig.rows(); ++r)
            for (std::size_t c = 0; c < ig.cols(); ++c) ig(r, c) += n.grad(r, off + c);
        }
        off += inp->value.cols();
      }
    };
  }
  return Var(node);
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw AdError("concat_rows: no parts");
  std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw AdError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < p.rows(); ++r)
      for (std::size_t c = 0; c < cols; ++c) out(offset + r, c) = p.value()(r, c);
    offset += p.rows();
  }
  std::vector<std::shared_ptr<Node>> inputs;
  for (const auto& p : parts) inputs.push_back(p.node());
  auto node = make_node("concat_rows", std::move(out), std::move(inputs));
  if (node->needs_grad) {
    node->backward_fn = [](Node& n) {
      std::size_t off = 0;
      for (auto& inp : n.inputs) {
        if (inp->needs_grad) {
          Matrix& ig = inp->ensure_grad();
          for (std::size_t r = 0; r < ig.rows(); ++r)
            for (std::size_t c = 0; c < ig.cols(); ++c) ig(r, c) += n.grad(off + r, c);
        }
        off += inp->value.rows();
      }
    };
  }
  return Var(node);
}

Var slice_cols(const Var& a, std::size_t start, std::size_t len) {
  if (start + len > a.cols()) throw AdError("slice_cols: range out of bounds");
  Matrix out(a.rows(), len);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < len; ++c) out(r, c) = a.value()(r, start + c);
  auto node = make_node("slice_cols", std::move(out), {a.node()});
  if (node->needs_grad) {
    node->backward_fn = [start](Node& n) {
      auto& in = *n.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      for (std::size_t r = 0; r < n.grad.rows(); ++r)
        for (std::size_t c = 0; c < n.grad.cols(); ++c) ig(r, start + c) += n.grad(r, c);
    };
  }
  return Var(node);
}

Var tile_rows(const Var& a, std::size_t n) {
  if (a.rows() != 1) throw AdError("tile_rows: input must be a single row");
  Matrix out(n, a.cols());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a.value()(0, c);
  auto node = make_node("tile_rows", std::move(out), {a.node()});
  if (node->needs_grad) {
    node->backward_fn = [](Node& n2) {
      auto& in = *n2.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      for (std::size_t r = 0; r < n2.grad.rows(); ++r)
        for (std::size_t c = 0; c < n2.grad.cols(); ++c) ig(0, c) += n2.grad(r, c);
    };
  }
  return Var(node);
}

Var softmax(const Var& a) {
  Matrix out(a.rows(), a.cols());
  const Matrix& av = a.value();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double mx = av(r, 0);
    for (std::size_t c = 1; c < a.cols(); ++c) mx = std::max(mx, av(r, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) denom += std::exp(av(r, c) - mx);
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = std::exp(av(r, c) - mx) / denom;
  }
  auto node = make_node("softmax", std::move(out), {a.node()});
  if (node->needs_grad) {
    node->backward_fn = [](Node& n) {
      auto& in = *n.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      for (std::size_t r = 0; r < n.value.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n.value.cols(); ++c) dot += n.grad(r, c) * n.value(r, c);
        for (std::size_t c = 0; c < n.value.cols(); ++c)
          ig(r, c) += n.value(r, c) * (n.grad(r, c) - dot);
      }
    };
  }
  return Var(node);
}

Var cross_entropy_logits(const Var& logits, std::size_t label) {
  if (logits.rows() != 1) throw AdError("cross_entropy_logits: expected 1xC logits");
  if (label >= logits.cols()) throw AdError("cross_entropy_logits: label out of range");
  const Matrix& lv = logits.value();
  double mx = lv(0, 0);
  for (std::size_t c = 1; c < lv.cols(); ++c) mx = std::max(mx, lv(0, c));
  double denom = 0.0;
  for (std::size_t c = 0; c < lv.cols(); ++c) denom += std::exp(lv(0, c) - mx);
  double loss = std::log(denom) - (lv(0, label) - mx);
  auto probs = std::make_shared<std::vector<double>>(lv.cols());
  for (std::size_t c = 0; c < lv.cols(); ++c) (*probs)[c] = std::exp(lv(0, c) - mx) / denom;
  auto node =
      make_node("cross_entropy_logits", Matrix(1, 1, std::vector<double>{loss}), {logits.node()});
  if (node->needs_grad) {
    node->backward_fn = [probs, label](Node& n) {
      auto& in = *n.inputs[0];
      if (!in.needs_grad) return;
      Matrix& ig = in.ensure_grad();
      double g = n.grad(0, 0);
      for (std::size_t c = 0; c < ig.cols(); ++c)
        ig(0, c) += g * ((*probs)[c] - (c == label ? 1.0 : 0.0));
    };
  }
  return Var(node);
}

void adam_step(std::vector<Var>& params, AdamState& state, double lr) {
  if (lr <= 0.0) throw AdError("adam_step: lr must be positive");
  if (state.first_moment.empty()) {
    for (auto& p : params) {
      state.first_moment.emplace_back(p.rows(), p.cols());
      state.second_moment.emplace_back(p.rows(), p.cols());
    }
  }
  if (state.first_moment.size() != params.size())
    throw AdError("adam_step: state/parameter count mismatch");

  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& value = params[p].mutable_value();
    Matrix& m = state.first_moment[p];
    Matrix& v = state.second_moment[p];
    if (!m.same_shape(value)) throw AdError("adam_step: moment shape mismatch");
    const bool has_grad = params[p].has_grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      double g = has_grad ? params[p].grad().at(i) : 0.0;
      if (std::isnan(g))
        throw AdError("adam_step: NaN gradient in parameter '" + params[p].name() + "'");
      m.at(i) = state.beta1 * m.at(i) + (1.0 - state.beta1) * g;
      v.at(i) = state.beta2 * v.at(i) + (1.0 - state.beta2) * g * g;
      double mhat = m.at(i) / bc1;
      double vhat = v.at(i) / bc2;
      value.at(i) -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

void zero_grads(std::vector<Var>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace popup::ad
