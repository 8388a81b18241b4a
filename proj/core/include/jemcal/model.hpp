#pragma once

// A softmax MLP classifier read as an energy-based model.
//
// For logits f(x) in R^K and temperature T:
//   class energy      E(x, y) = -f(x)[y] / T
//   free energy       E(x)    = -T * logsumexp(f(x) / T)
//   posterior         p(y|x)  = softmax(f(x) / T)
//   log p(x, y) + log Z       = f(x)[y] / T
//   log p(x)    + log Z       = logsumexp(f(x) / T)
// The partition function Z is never computed; the two log-densities are
// reported up to the shared constant log Z.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "jemcal/random.hpp"
#include "jemcal/tensor.hpp"

namespace jemcal {

enum class Activation { leaky_relu, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct ModelSpec {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t num_classes = 2;
  Activation activation = Activation::leaky_relu;
  double leaky_slope = 0.05;
  double temperature = 1.0;

  bool operator==(const ModelSpec&) const = default;
};

/// Affine layer, y = x * weight + bias with weight [in x out].
struct Layer {
  Tensor weight;
  Tensor bias;
};

class EnergyModel {
 public:
  /// Validates that layer shapes chain from spec.input_dim to spec.num_classes.
  EnergyModel(ModelSpec spec, std::vector<Layer> layers);

  /// He-normal (leaky ReLU) or Glorot-normal (tanh) weights, zero biases.
  static EnergyModel init(const ModelSpec& spec, Rng& rng);
  static EnergyModel zeros(const ModelSpec& spec);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t input_dim() const noexcept { return spec_.input_dim; }
  std::size_t num_classes() const noexcept { return spec_.num_classes; }
  double temperature() const noexcept { return spec_.temperature; }
  void set_temperature(double t);

  std::span<Layer> layers() noexcept { return layers_; }
  std::span<const Layer> layers() const noexcept { return layers_; }

  /// Weights and biases in layer order (w0, b0, w1, b1, ...).
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// Logits node; parameters enter the graph as read-only views.
  Var forward(Graph& g, Var x) const;
  /// Logits node; parameters are bound leaves and receive gradients.
  Var forward_trainable(Graph& g, Var x);

 private:
  template <class Bind>
  Var forward_impl(Graph& g, Var x, Bind bind) const;

  ModelSpec spec_;
  std::vector<Layer> layers_;
};

/// -T * logsumexp(logits / T), one entry per row.
Var free_energy(Var logits, double temperature);

struct LogitsBatch {
  Tensor values;  // [n x K]
  Tensor inputs;  // [n x D]
};

/// Forward pass. Throws InputError on non-finite input, DimensionError on a
/// feature-count mismatch.
LogitsBatch logits(const EnergyModel& model, const Tensor& x);

std::vector<double> class_energy(const EnergyModel& model, const Tensor& x, Label y);
std::vector<double> class_energy(const EnergyModel& model, const Tensor& x, std::span<const Label> y);
std::vector<double> free_energy(const EnergyModel& model, const Tensor& x);
/// Row-stochastic [n x K] matrix.
Tensor class_posterior(const EnergyModel& model, const Tensor& x);
std::vector<double> log_joint_unnorm(const EnergyModel& model, const Tensor& x, Label y);
std::vector<double> log_joint_unnorm(const EnergyModel& model, const Tensor& x, std::span<const Label> y);
std::vector<double> log_marginal_unnorm(const EnergyModel& model, const Tensor& x);

/// d(free energy of row i) / d(x row i), as an [n x D] matrix.
Tensor input_gradient(const EnergyModel& model, const Tensor& x);

/// softmax(logits / T) row by row.
Tensor posterior_from_logits(const Tensor& logits, double temperature = 1.0);

}  // namespace jemcal
