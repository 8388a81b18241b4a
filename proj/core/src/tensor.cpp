#include "jemcal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

#include "jemcal/error.hpp"

namespace jemcal {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {
  if (shape_.size() > 2) throw DimensionError("tensors of rank > 2 are not supported: " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) throw DimensionError("tensors of rank > 2 are not supported: " + shape_string(shape_));
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) +
                         " elements");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor(Shape{rows, cols}, std::move(data));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, stddev);
  for (double& v : t.data_) v = normal(rng);
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

std::span<const double> Tensor::grad() const noexcept {
  if (!grad_) return {};
  return *grad_;
}

void Tensor::zero_grad() { grad_.emplace(data_.size(), 0.0); }

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != data_.size()) throw DimensionError("gradient length mismatch");
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  auto& dst = *grad_;
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add_bias: return "add_bias";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::tanh: return "tanh";
    case OpKind::log_sum_exp: return "log_sum_exp";
    case OpKind::gather: return "gather";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::constant;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Graph::view(const Tensor& value) {
  Node n;
  n.kind = OpKind::constant;
  n.borrowed = &value;
  return push(std::move(n));
}

Var Graph::leaf(Tensor& value) {
  Node n;
  n.kind = OpKind::leaf;
  n.borrowed = &value;
  if (value.requires_grad()) {
    n.bound = &value;
    n.needs_grad = true;
  }
  return push(std::move(n));
}

Var Graph::record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
  Node n;
  n.kind = kind;
  for (NodeId in : inputs) {
    if (in >= nodes_.size()) throw ContractError("operation input refers to a future node");
    n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
  }
  n.inputs = std::move(inputs);
  n.owned = std::move(value);
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Graph::value(NodeId id) const {
  const Node& n = nodes_.at(id);
  return n.borrowed ? *n.borrowed : n.owned;
}

std::span<double> Graph::grad_buffer(NodeId id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
  return n.grad;
}

void Graph::accumulate(NodeId id, std::span<const double> g) {
  if (!nodes_.at(id).needs_grad) return;
  auto dst = grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

std::vector<Graph::NodeId> Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward(): loss belongs to a different graph");
  const Tensor& lv = value(loss.id);
  if (lv.size() != 1) throw ContractError("backward() requires a scalar loss, got shape " + shape_string(lv.shape()));

  for (Node& n : nodes_) n.grad.clear();
  std::vector<NodeId> visited;
  if (!nodes_[loss.id].needs_grad) return visited;
  grad_buffer(loss.id)[0] = 1.0;

  for (NodeId id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    visited.push_back(id);
    if (n.backward) n.backward(*this, id);
    if (n.bound) nodes_[id].bound->accumulate_grad(nodes_[id].grad);
  }
  return visited;
}

namespace {

Graph& graph_of(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) throw ContractError("operands belong to different graphs");
  return *a.graph;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void check_labels(std::span<const Label> labels, std::size_t rows, std::size_t classes, const char* op) {
  if (labels.size() != rows) {
    throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  }
  for (Label y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw IndexError(std::string(op) + ": class index " + std::to_string(y) + " out of range [0, " +
                       std::to_string(classes) + ")");
    }
  }
}

template <class Fwd, class Deriv>
Var elementwise_unary(Var a, OpKind kind, Fwd fwd, Deriv deriv) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const auto ia = a.id;
  return g.record(kind, {ia}, std::move(out), [ia, deriv](Graph& gr, Graph::NodeId self) {
    const Tensor& x = gr.value(ia);
    const Tensor& y = gr.value(self);
    auto gout = gr.grad(self);
    if (!gr.needs_grad(ia)) return;
    auto gin = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < gout.size(); ++i) gin[i] += gout[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  if (bv.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  Tensor out(Shape{m, n});
  const double* A = av.data().data();
  const double* B = bv.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  const auto ia = a.id, ib = b.id;
  return g.record(OpKind::matmul, {ia, ib}, std::move(out), [ia, ib, m, k, n](Graph& gr, Graph::NodeId self) {
    const double* dC = gr.grad(self).data();
    const double* A = gr.value(ia).data().data();
    const double* B = gr.value(ib).data().data();
    if (gr.needs_grad(ia)) {
      double* dA = gr.grad_buffer(ia).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* dcrow = dC + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
          dA[i * k + p] += acc;
        }
      }
    }
    if (gr.needs_grad(ib)) {
      double* dB = gr.grad_buffer(ib).data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* dcrow = dC + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          double* dbrow = dB + p * n;
          for (std::size_t j = 0; j < n; ++j) dbrow[j] += aip * dcrow[j];
        }
      }
    }
  });
}

Var add_bias(Var a, Var bias) {
  Graph& g = graph_of(a, bias);
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  require_matrix(av, "add_bias");
  const std::size_t m = av.shape()[0], n = av.shape()[1];
  if (bv.rank() != 1 || bv.size() != n) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not fit " + shape_string(av.shape()));
  }
  Tensor out = av;
  out.set_requires_grad(false);
  out.clear_grad();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  const auto ia = a.id, ib = bias.id;
  return g.record(OpKind::add_bias, {ia, ib}, std::move(out), [ia, ib, m, n](Graph& gr, Graph::NodeId self) {
    auto gout = gr.grad(self);
    gr.accumulate(ia, gout);
    if (gr.needs_grad(ib)) {
      auto gb = gr.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += gout[i * n + j];
    }
  });
}

Var operator+(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const auto ia = a.id, ib = b.id;
  return g.record(OpKind::add, {ia, ib}, std::move(out), [ia, ib](Graph& gr, Graph::NodeId self) {
    auto gout = gr.grad(self);
    gr.accumulate(ia, gout);
    gr.accumulate(ib, gout);
  });
}

Var operator-(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const auto ia = a.id, ib = b.id;
  return g.record(OpKind::sub, {ia, ib}, std::move(out), [ia, ib](Graph& gr, Graph::NodeId self) {
    auto gout = gr.grad(self);
    gr.accumulate(ia, gout);
    if (gr.needs_grad(ib)) {
      auto gb = gr.grad_buffer(ib);
      for (std::size_t i = 0; i < gout.size(); ++i) gb[i] -= gout[i];
    }
  });
}

Var operator*(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const auto ia = a.id, ib = b.id;
  return g.record(OpKind::mul, {ia, ib}, std::move(out), [ia, ib](Graph& gr, Graph::NodeId self) {
    auto gout = gr.grad(self);
    const Tensor& av = gr.value(ia);
    const Tensor& bv = gr.value(ib);
    if (gr.needs_grad(ia)) {
      auto ga = gr.grad_buffer(ia);
      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * bv[i];
    }
    if (gr.needs_grad(ib)) {
      auto gb = gr.grad_buffer(ib);
      for (std::size_t i = 0; i < gout.size(); ++i) gb[i] += gout[i] * av[i];
    }
  });
}

Var operator*(double c, Var a) {
  return elementwise_unary(
      a, OpKind::scale, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var operator-(Var a) { return -1.0 * a; }

Var leaky_relu(Var a, double slope) {
  return elementwise_unary(
      a, OpKind::leaky_relu, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var tanh(Var a) {
  return elementwise_unary(
      a, OpKind::tanh, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

double log_sum_exp(std::span<const double> row) {
  if (row.empty()) throw DimensionError("log_sum_exp: empty class axis");
  const double mx = *std::max_element(row.begin(), row.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double v : row) s += std::exp(v - mx);
  return mx + std::log(s);
}

void softmax(std::span<const double> row, std::span<double> out) {
  if (row.empty()) throw DimensionError("softmax: empty class axis");
  const double mx = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    out[j] = std::exp(row[j] - mx);
    s += out[j];
  }
  for (std::size_t j = 0; j < row.size(); ++j) out[j] /= s;
}

Var log_sum_exp(Var t) {
  Graph& g = *t.graph;
  const Tensor& tv = t.value();
  require_matrix(tv, "log_sum_exp");
  const std::size_t n = tv.shape()[0], k = tv.shape()[1];
  if (k == 0) throw DimensionError("log_sum_exp: empty class axis in " + shape_string(tv.shape()));
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) out[i] = log_sum_exp(tv.row(i));
  const auto it = t.id;
  return g.record(OpKind::log_sum_exp, {it}, std::move(out), [it, n, k](Graph& gr, Graph::NodeId self) {
    if (!gr.needs_grad(it)) return;
    auto gout = gr.grad(self);
    const Tensor& x = gr.value(it);
    const Tensor& y = gr.value(self);
    auto gin = gr.grad_buffer(it);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) gin[i * k + j] += gout[i] * std::exp(x[i * k + j] - y[i]);
    }
  });
}

Var gather(Var t, std::span<const Label> index) {
  Graph& g = *t.graph;
  const Tensor& tv = t.value();
  require_matrix(tv, "gather");
  const std::size_t n = tv.shape()[0], k = tv.shape()[1];
  check_labels(index, n, k, "gather");
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) out[i] = tv[i * k + static_cast<std::size_t>(index[i])];
  std::vector<Label> idx(index.begin(), index.end());
  const auto it = t.id;
  return g.record(OpKind::gather, {it}, std::move(out), [it, k, idx = std::move(idx)](Graph& gr, Graph::NodeId self) {
    if (!gr.needs_grad(it)) return;
    auto gout = gr.grad(self);
    auto gin = gr.grad_buffer(it);
    for (std::size_t i = 0; i < idx.size(); ++i) gin[i * k + static_cast<std::size_t>(idx[i])] += gout[i];
  });
}

Var sum(Var a) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  const auto ia = a.id;
  return g.record(OpKind::sum, {ia}, Tensor::scalar(s), [ia](Graph& gr, Graph::NodeId self) {
    if (!gr.needs_grad(ia)) return;
    const double go = gr.grad(self)[0];
    for (double& v : gr.grad_buffer(ia)) v += go;
  });
}

Var mean(Var a) {
  Graph& g = *a.graph;
  const Tensor& av = a.value();
  if (av.size() == 0) throw ContractError("mean of an empty tensor");
  double s = 0.0;
  for (double v : av.data()) s += v;
  const double n = static_cast<double>(av.size());
  const auto ia = a.id;
  return g.record(OpKind::mean, {ia}, Tensor::scalar(s / n), [ia, n](Graph& gr, Graph::NodeId self) {
    if (!gr.needs_grad(ia)) return;
    const double go = gr.grad(self)[0] / n;
    for (double& v : gr.grad_buffer(ia)) v += go;
  });
}

Var softmax_cross_entropy(Var logits, std::span<const Label> labels) {
  Graph& g = *logits.graph;
  const Tensor& lv = logits.value();
  require_matrix(lv, "softmax_cross_entropy");
  const std::size_t n = lv.shape()[0], k = lv.shape()[1];
  if (n == 0) throw ContractError("softmax_cross_entropy: empty batch");
  if (k == 0) throw DimensionError("softmax_cross_entropy: empty class axis");
  check_labels(labels, n, k, "softmax_cross_entropy");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += log_sum_exp(lv.row(i)) - lv[i * k + static_cast<std::size_t>(labels[i])];
  std::vector<Label> y(labels.begin(), labels.end());
  const auto il = logits.id;
  return g.record(OpKind::softmax_cross_entropy, {il}, Tensor::scalar(total / static_cast<double>(n)),
                  [il, n, k, y = std::move(y)](Graph& gr, Graph::NodeId self) {
                    if (!gr.needs_grad(il)) return;
                    const double go = gr.grad(self)[0] / static_cast<double>(n);
                    const Tensor& x = gr.value(il);
                    auto gin = gr.grad_buffer(il);
                    std::vector<double> p(k);
                    for (std::size_t i = 0; i < n; ++i) {
                      softmax(x.row(i), p);
                      p[static_cast<std::size_t>(y[i])] -= 1.0;
                      for (std::size_t j = 0; j < k; ++j) gin[i * k + j] += go * p[j];
                    }
                  });
}

}  // namespace jemcal
