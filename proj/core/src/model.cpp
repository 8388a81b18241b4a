#include "jemcal/model.hpp"

#include <cmath>
#include <utility>

#include "jemcal/error.hpp"

namespace jemcal {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "tanh") return Activation::tanh;
  throw ContractError("unknown activation '" + name + "' (expected leaky_relu or tanh)");
}

EnergyModel::EnergyModel(ModelSpec spec, std::vector<Layer> layers) : spec_(std::move(spec)), layers_(std::move(layers)) {
  if (spec_.input_dim == 0) throw ContractError("model input_dim must be positive");
  if (spec_.num_classes == 0) throw ContractError("model num_classes must be positive");
  if (!(spec_.temperature > 0.0) || !std::isfinite(spec_.temperature)) {
    throw ContractError("temperature must be positive and finite");
  }
  if (layers_.size() != spec_.hidden.size() + 1) {
    throw DimensionError("expected " + std::to_string(spec_.hidden.size() + 1) + " layers, got " +
                         std::to_string(layers_.size()));
  }
  std::size_t in = spec_.input_dim;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::size_t out = l < spec_.hidden.size() ? spec_.hidden[l] : spec_.num_classes;
    const Tensor& w = layers_[l].weight;
    const Tensor& b = layers_[l].bias;
    if (w.shape() != Shape{in, out} || b.shape() != Shape{out}) {
      throw DimensionError("layer " + std::to_string(l) + ": expected weight [" + std::to_string(in) + "x" +
                           std::to_string(out) + "] and bias [" + std::to_string(out) + "], got " +
                           shape_string(w.shape()) + " and " + shape_string(b.shape()));
    }
    in = out;
  }
  for (Tensor* p : parameters()) p->set_requires_grad(true);
}

namespace {

std::vector<Layer> make_layers(const ModelSpec& spec, Rng* rng) {
  std::vector<Layer> layers;
  std::size_t in = spec.input_dim;
  for (std::size_t l = 0; l <= spec.hidden.size(); ++l) {
    const std::size_t out = l < spec.hidden.size() ? spec.hidden[l] : spec.num_classes;
    Layer layer;
    if (rng) {
      const double gain = spec.activation == Activation::tanh ? 1.0 : 2.0;
      layer.weight = Tensor::randn(Shape{in, out}, *rng, std::sqrt(gain / static_cast<double>(in)));
    } else {
      layer.weight = Tensor(Shape{in, out});
    }
    layer.bias = Tensor(Shape{out});
    layers.push_back(std::move(layer));
    in = out;
  }
  return layers;
}

}  // namespace

EnergyModel EnergyModel::init(const ModelSpec& spec, Rng& rng) { return EnergyModel(spec, make_layers(spec, &rng)); }

EnergyModel EnergyModel::zeros(const ModelSpec& spec) { return EnergyModel(spec, make_layers(spec, nullptr)); }

void EnergyModel::set_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw ContractError("temperature must be positive and finite");
  spec_.temperature = t;
}

std::vector<Tensor*> EnergyModel::parameters() {
  std::vector<Tensor*> out;
  for (Layer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Tensor*> EnergyModel::parameters() const {
  std::vector<const Tensor*> out;
  for (const Layer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::size_t EnergyModel::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* p : parameters()) n += p->size();
  return n;
}

void EnergyModel::zero_grad() {
  for (Tensor* p : parameters()) p->zero_grad();
}

template <class Bind>
Var EnergyModel::forward_impl(Graph&, Var x, Bind bind) const {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.shape()[1] != spec_.input_dim) {
    throw DimensionError("model expects inputs [n x " + std::to_string(spec_.input_dim) + "], got " +
                         shape_string(xv.shape()));
  }
  Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = add_bias(matmul(h, bind(layers_[l].weight)), bind(layers_[l].bias));
    if (l + 1 < layers_.size()) {
      h = spec_.activation == Activation::tanh ? tanh(h) : leaky_relu(h, spec_.leaky_slope);
    }
  }
  return h;
}

Var EnergyModel::forward(Graph& g, Var x) const {
  return forward_impl(g, x, [&g](const Tensor& t) { return g.view(t); });
}

Var EnergyModel::forward_trainable(Graph& g, Var x) {
  return forward_impl(g, x, [&g](const Tensor& t) { return g.leaf(const_cast<Tensor&>(t)); });
}

Var free_energy(Var logits, double temperature) {
  if (temperature == 1.0) return -log_sum_exp(logits);
  return -temperature * log_sum_exp((1.0 / temperature) * logits);
}

namespace {

void check_input(const EnergyModel& model, const Tensor& x) {
  if (x.rank() != 2 || x.shape()[1] != model.input_dim()) {
    throw DimensionError("expected inputs with D=" + std::to_string(model.input_dim()) + " features, found " +
                         shape_string(x.shape()));
  }
  if (!x.all_finite()) throw InputError("model input contains non-finite values");
}

std::vector<Label> broadcast_label(const EnergyModel& model, std::size_t n, Label y) {
  if (y < 0 || static_cast<std::size_t>(y) >= model.num_classes()) {
    throw IndexError("class index " + std::to_string(y) + " out of range [0, " + std::to_string(model.num_classes()) +
                     ")");
  }
  return std::vector<Label>(n, y);
}

}  // namespace

LogitsBatch logits(const EnergyModel& model, const Tensor& x) {
  check_input(model, x);
  Graph g;
  Var out = model.forward(g, g.view(x));
  return LogitsBatch{out.value(), x};
}

std::vector<double> class_energy(const EnergyModel& model, const Tensor& x, std::span<const Label> y) {
  std::vector<double> joint = log_joint_unnorm(model, x, y);
  for (double& v : joint) v = -v;
  return joint;
}

std::vector<double> class_energy(const EnergyModel& model, const Tensor& x, Label y) {
  return class_energy(model, x, broadcast_label(model, x.rows(), y));
}

std::vector<double> log_joint_unnorm(const EnergyModel& model, const Tensor& x, std::span<const Label> y) {
  const Tensor z = logits(model, x).values;
  const std::size_t k = z.cols();
  if (y.size() != z.rows()) throw DimensionError("one label per row required");
  std::vector<double> out(z.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= k) {
      throw IndexError("class index " + std::to_string(y[i]) + " out of range [0, " + std::to_string(k) + ")");
    }
    out[i] = z[i * k + static_cast<std::size_t>(y[i])] / model.temperature();
  }
  return out;
}

std::vector<double> log_joint_unnorm(const EnergyModel& model, const Tensor& x, Label y) {
  return log_joint_unnorm(model, x, broadcast_label(model, x.rows(), y));
}

std::vector<double> free_energy(const EnergyModel& model, const Tensor& x) {
  check_input(model, x);
  Graph g;
  Var fe = free_energy(model.forward(g, g.view(x)), model.temperature());
  return fe.value().values();
}

std::vector<double> log_marginal_unnorm(const EnergyModel& model, const Tensor& x) {
  const Tensor z = logits(model, x).values;
  const double t = model.temperature();
  std::vector<double> out(z.rows());
  std::vector<double> scaled(z.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto row = z.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) scaled[j] = row[j] / t;
    out[i] = log_sum_exp(scaled);
  }
  return out;
}

Tensor posterior_from_logits(const Tensor& logits, double temperature) {
  if (logits.rank() != 2) throw DimensionError("posterior: expected [n x K] logits, got " + shape_string(logits.shape()));
  Tensor probs(logits.shape());
  std::vector<double> scaled(logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) scaled[j] = row[j] / temperature;
    softmax(scaled, probs.row(i));
  }
  return probs;
}

Tensor class_posterior(const EnergyModel& model, const Tensor& x) {
  return posterior_from_logits(logits(model, x).values, model.temperature());
}

Tensor input_gradient(const EnergyModel& model, const Tensor& x) {
  check_input(model, x);
  Tensor xin = x;
  xin.clear_grad();
  xin.set_requires_grad(true);
  Graph g;
  Var fe = free_energy(model.forward(g, g.leaf(xin)), model.temperature());
  g.backward(sum(fe));
  Tensor grad(x.shape());
  if (xin.has_grad()) std::copy(xin.grad().begin(), xin.grad().end(), grad.data().begin());
  return grad;
}

}  // namespace jemcal
