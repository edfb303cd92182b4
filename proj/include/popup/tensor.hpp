#ifndef POPUP_TENSOR_HPP
#define POPUP_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace popup::ad {

struct AdError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of 64-bit floats. All tensors in the engine are
/// rank-2; vectors are 1×C or N×1, scalars 1×1.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw AdError("Matrix: data length != rows*cols");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& at(std::size_t i) { return data_[i]; }
  double at(std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

/// One record of the computation graph. Creation order is a valid
/// topological order; `inputs` always precede the node.
struct Node {
  std::int64_t id = 0;
  std::string op;
  Matrix value;
  Matrix grad;  // allocated lazily on first accumulation
  bool requires_grad = false;  // leaf parameter / watched input
  bool needs_grad = false;     // this node or an ancestor requires grad
  std::string name;            // optional, for parameters and diagnostics
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void accumulate_grad(const Matrix& g);
  Matrix& ensure_grad();
};

/// Handle to a graph node; building expressions from Vars records the graph.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Leaf tensor. requires_grad marks it as a gradient target.
  static Var leaf(Matrix value, bool requires_grad = false, std::string name = "");
  static Var scalar(double v);

  bool valid() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  const std::string& name() const { return node_->name; }
  std::shared_ptr<Node> node() const { return node_; }

  void zero_grad() { node_->grad = Matrix(); }

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse-mode sweep from `output`. `output_grad` defaults to ones (for a
/// 1×1 loss this is d loss/d loss = 1). Gradients accumulate into every
/// reachable node with needs_grad, including non-parameter inputs marked
/// requires_grad (point-cloud saliency relies on this).
void backward(const Var& output);
void backward(const Var& output, const Matrix& output_grad);

// ---- primitives ----

Var matmul(const Var& a, const Var& b);
/// Elementwise with broadcasting: b may share a's shape, be a 1×C row
/// (broadcast down rows), an N×1 column (broadcast across columns) or 1×1
/// (broadcast everywhere).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_const(const Var& a, double c);
Var relu(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var sqrt(const Var& a);
/// Sum of all entries -> 1×1.
Var sum(const Var& a);
/// Sum of squared entries -> 1×1.
Var sum_squares(const Var& a);
/// Column-wise sum: N×C -> 1×C.
Var colsum(const Var& a);
/// Row-wise sum: N×C -> N×1.
Var rowsum(const Var& a);
/// Column-wise max over the point set: N×C -> 1×C. Ties take the first row.
Var colmax(const Var& a);
/// Grouped column max: (G·K)×C -> G×C, rows [g·K, (g+1)·K) pooled per group.
Var group_colmax(const Var& a, std::size_t groups);
/// Row gather: out[i] = a[indices[i]]. Backward scatter-adds.
Var gather_rows(const Var& a, const std::vector<std::size_t>& indices);
/// Horizontal concatenation; all parts share the row count.
Var concat_cols(const std::vector<Var>& parts);
/// Vertical concatenation; all parts share the column count.
Var concat_rows(const std::vector<Var>& parts);
/// Column slice [start, start+len).
Var slice_cols(const Var& a, std::size_t start, std::size_t len);
/// Repeats a 1×C row n times -> n×C.
Var tile_rows(const Var& a, std::size_t n);
/// Row-wise softmax.
Var softmax(const Var& a);
/// Fused softmax + cross-entropy for a single 1×C logit row -> 1×1.
Var cross_entropy_logits(const Var& logits, std::size_t label);

// ---- optimizer ----

/// Standard Adam with bias correction.
struct AdamState {
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Matrix> first_moment;   // one per parameter, same shape
  std::vector<Matrix> second_moment;
};

/// One Adam update over `params` using their accumulated grads (missing
/// grads are treated as zero). Moment buffers are created on first use.
/// NaN gradients abort with the parameter name.
void adam_step(std::vector<Var>& params, AdamState& state, double lr);

void zero_grads(std::vector<Var>& params);

}  // namespace popup::ad

#endif  // POPUP_TENSOR_HPP
