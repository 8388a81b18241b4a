#pragma once

// Dense float64 tensors (rank 0..2) and a tape-based reverse-mode
// differentiation graph.
//
// A Graph records operations in creation order; node ids are strictly
// increasing, so the tape is acyclic by construction and backward() is a
// single reverse sweep. Tensors live outside graphs: `Graph::leaf` binds a
// tensor by reference and, when the tensor requires grad, backward()
// accumulates into `Tensor::grad`. Accumulation is deliberate; call
// `zero_grad()` between optimisation steps.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jemcal/random.hpp"

namespace jemcal {

using Shape = std::vector<std::size_t>;
using Label = int;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tensor {
 public:
  Tensor() : shape_{0} {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor full(Shape shape, double value);
  /// Gaussian fill, N(0, stddev^2) per element.
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  /// Leading dimension (1 for scalars).
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
  /// Trailing dimension of a matrix; 1 for vectors and scalars.
  std::size_t cols() const noexcept { return shape_.size() == 2 ? shape_[1] : 1; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  Tensor& set_requires_grad(bool on = true) noexcept {
    requires_grad_ = on;
    return *this;
  }

  bool has_grad() const noexcept { return grad_.has_value(); }
  /// Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const noexcept;
  /// Set the gradient to zeros (allocating it if absent).
  void zero_grad();
  void clear_grad() noexcept { grad_.reset(); }
  void accumulate_grad(std::span<const double> g);

  bool all_finite() const noexcept;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
  bool requires_grad_ = false;
};

enum class OpKind {
  constant,
  leaf,
  matmul,
  add_bias,
  add,
  sub,
  mul,
  scale,
  leaky_relu,
  tanh,
  log_sum_exp,
  gather,
  sum,
  mean,
  softmax_cross_entropy,
};

std::string_view op_name(OpKind kind);

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Graph {
 public:
  using NodeId = std::size_t;
  /// Propagates the node's gradient into its inputs via `accumulate`.
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Owned copy; never receives a gradient.
  Var constant(Tensor value);
  /// Borrowed, read-only; never receives a gradient. `value` must outlive the graph.
  Var view(const Tensor& value);
  /// Borrowed. If `value.requires_grad()`, backward() accumulates into it.
  Var leaf(Tensor& value);

  Var record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(NodeId id) const;
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  bool needs_grad(NodeId id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() loss w.r.t. node `id`; empty if none flowed.
  std::span<const double> grad(NodeId id) const { return nodes_.at(id).grad; }
  std::span<const double> grad(Var v) const { return grad(v.id); }

  /// Adds `g` into the gradient buffer of `id` (no-op if the node needs no grad).
  void accumulate(NodeId id, std::span<const double> g);
  /// Mutable gradient buffer of `id`, allocated on first use.
  std::span<double> grad_buffer(NodeId id);

  /// Reverse sweep from a scalar loss. Node-level gradients are recomputed
  /// from scratch each call; bound leaf tensors accumulate across calls.
  /// Returns the ids of the nodes whose backward rule ran, in visit order.
  std::vector<NodeId> backward(Var loss);

 private:
  struct Node {
    OpKind kind = OpKind::constant;
    std::vector<NodeId> inputs;
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor* bound = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
    BackwardFn backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

// Operations. All inputs must belong to the same graph.

/// [m x k] * [k x n] -> [m x n].
Var matmul(Var a, Var b);
/// Adds a length-n vector to every row of an [m x n] matrix.
Var add_bias(Var a, Var bias);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
/// Elementwise product.
Var operator*(Var a, Var b);
Var operator*(double c, Var a);
Var operator-(Var a);
Var leaky_relu(Var a, double slope);
Var tanh(Var a);
/// Row-wise log(sum(exp(.))) of an [n x K] matrix, K >= 1 -> [n].
Var log_sum_exp(Var t);
/// out[i] = t[i, index[i]] for an [n x K] matrix -> [n].
Var gather(Var t, std::span<const Label> index);
Var sum(Var a);
Var mean(Var a);
/// Mean over rows of -log softmax(logits)[label] -> scalar.
Var softmax_cross_entropy(Var logits, std::span<const Label> labels);

/// Plain (graph-free) row-wise log-sum-exp with the max-shift.
double log_sum_exp(std::span<const double> row);
/// Softmax of one row into `out` (same length).
void softmax(std::span<const double> row, std::span<double> out);

}  // namespace jemcal
