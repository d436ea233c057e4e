#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace wagparse::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major 64-bit array. Everything in the model is a matrix; vectors
/// are 1 x n and scalars 1 x 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols) : data_(Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))) {}
  explicit Tensor(Matrix data) : data_(std::move(data)) {}

  /// `shape` has one or two entries; values are row-major.
  static Tensor from(const std::vector<std::size_t>& shape, const std::vector<double>& values);

  std::vector<std::size_t> shape() const { return {rows(), cols()}; }
  std::size_t rows() const { return static_cast<std::size_t>(data_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(data_.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }

  std::span<const double> values() const { return {data_.data(), size()}; }
  std::span<double> values() { return {data_.data(), size()}; }

  const Matrix& matrix() const { return data_; }
  Matrix& matrix() { return data_; }

  double operator()(std::size_t r, std::size_t c) const {
    return data_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  Matrix data_;
};

/// Trainable (or frozen) model weight with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad.matrix().setZero(); }
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded operation on the tape: its value, the gradient flowing into
/// it, and the closure that pushes that gradient to its inputs.
struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;
  Parameter* parameter = nullptr;

  void accumulate(const Matrix& delta) {
    if (grad.size() == 0) {
      grad = delta;
    } else {
      grad += delta;
    }
  }
  template <typename Expr>
  void accumulate_expr(const Expr& delta) {
    if (grad.size() == 0) {
      grad = delta;
    } else {
      grad += delta;
    }
  }
};

/// Handle to a tape node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  double scalar() const { return node_->value(0, 0); }
  const NodePtr& node() const { return node_; }
  bool defined() const { return node_ != nullptr; }

 private:
  NodePtr node_;
};

/// Thread-local switch for recording. Inference runs with recording off,
/// which makes every op a plain computation.
class GradMode {
 public:
  static bool enabled();
  static void set(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Matrix value);
/// Leaf bound to a parameter. Gradients reach `p.grad` only when the
/// parameter is trainable and recording is on.
Var param(Parameter& p);

/// Builds a result node. `backward` is kept only when some input needs a
/// gradient; it must accumulate into the inputs of the node it receives.
Var make_result(Matrix value, std::vector<NodePtr> inputs, std::function<void(Node&)> backward);

/// Reverse pass from a 1x1 loss. Adds into Parameter::grad of every
/// trainable parameter reached.
void backward(const Var& loss);

}  // namespace wagparse::nn
