#pragma once

// Stochastic Gradient Langevin Dynamics over an input-space energy, with a
// persistent replay buffer of chain states.
//
// One update, for every row of the batch:
//   x <- clamp_box( x - (eps^2 / 2) * clip(dE/dx) + sigma * z ),  z ~ N(0, I)
// with sigma = eps (the Langevin rule) or sigma = noise_scale when
// decouple_noise is set.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "jemcal/box.hpp"
#include "jemcal/random.hpp"
#include "jemcal/tensor.hpp"

namespace jemcal {

class EnergyModel;

struct SgldConfig {
  int steps = 50;
  double step_size = 0.1;
  double noise_scale = 0.01;
  double reinit_prob = 0.05;
  std::optional<double> clip_grad = 10.0;
  bool decouple_noise = false;
  DataBox box{};

  /// Drift eps^2/2 = 1 with a small fixed noise of 0.01.
  static SgldConfig practical();
  /// Decoupled noise 0.01 with drift eps^2/2 = 0.045, for standardized
  /// low-dimensional features where a unit drift crosses the whole box.
  static SgldConfig low_dim();
  /// Throws ContractError when a field is out of range.
  void validate() const;
  double noise() const noexcept { return decouple_noise ? noise_scale : step_size; }

  bool operator==(const SgldConfig&) const = default;
};

/// |E| above this, or any non-finite energy/gradient, signals divergence.
inline constexpr double kDivergenceEnergy = 1e6;

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t dim, DataBox box = {});
  /// Rebuild from stored rows (row-major, `fill * dim` values).
  static ReplayBuffer restore(std::size_t capacity, std::size_t dim, DataBox box, std::vector<double> rows);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t fill() const noexcept { return entries_.size() / dim_; }
  bool empty() const noexcept { return entries_.empty(); }
  const DataBox& box() const noexcept { return box_; }
  std::span<const double> entry(std::size_t i) const { return {entries_.data() + i * dim_, dim_}; }
  std::span<const double> rows() const noexcept { return entries_; }

  /// Append until full, then overwrite uniformly chosen slots. Rejects
  /// non-finite rows and rows outside the box.
  void write_back(const Tensor& samples, Rng& rng);

 private:
  std::size_t capacity_;
  std::size_t dim_;
  DataBox box_;
  std::vector<double> entries_;
};

struct ChainStart {
  Tensor states;                 // [n x D]
  std::size_t from_prior = 0;    // rows drawn uniformly from the box
};

/// Uniform draws from the box, [n x dim].
Tensor sample_box(std::size_t n, std::size_t dim, DataBox box, Rng& rng);

/// Each row comes from the box prior with probability `reinit_prob`
/// (always, when the buffer is empty), otherwise from a uniformly chosen
/// buffer entry.
ChainStart init_chain(const ReplayBuffer& buffer, std::size_t n, double reinit_prob, Rng& rng);

/// Per-row energies for `x`; writes dE/dx into `grad` ([n x D]).
using EnergyGradFn = std::function<std::vector<double>(const Tensor& x, Tensor& grad)>;

/// Free energy of an energy model. The model must outlive the function.
EnergyGradFn model_free_energy(const EnergyModel& model);

/// Runs cfg.steps updates from x0. Throws SgldDivergence carrying the step
/// index. The result carries no graph attachment or gradient.
Tensor sgld_chain(const EnergyGradFn& energy, const Tensor& x0, const SgldConfig& cfg, Rng& rng);
Tensor sgld_chain(const EnergyModel& model, const Tensor& x0, const SgldConfig& cfg, Rng& rng);

}  // namespace jemcal
