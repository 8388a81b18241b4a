#include "jemcal/sgld.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "jemcal/error.hpp"
#include "jemcal/model.hpp"

namespace jemcal {

SgldConfig SgldConfig::practical() {
  SgldConfig cfg;
  cfg.step_size = std::numbers::sqrt2;
  cfg.noise_scale = 0.01;
  cfg.decouple_noise = true;
  return cfg;
}

SgldConfig SgldConfig::low_dim() {
  SgldConfig cfg = practical();
  cfg.step_size = 0.3;
  return cfg;
}

void SgldConfig::validate() const {
  if (steps < 1) throw ContractError("sgld steps must be >= 1");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ContractError("sgld step_size must be > 0");
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) throw ContractError("sgld noise_scale must be >= 0");
  if (!(reinit_prob >= 0.0 && reinit_prob <= 1.0)) throw ContractError("sgld reinit_prob must lie in [0, 1]");
  if (clip_grad && !(*clip_grad > 0.0)) throw ContractError("sgld clip_grad must be > 0");
  if (!box.valid()) throw ContractError("sgld box needs low < high");
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t dim, DataBox box)
    : capacity_(capacity), dim_(dim), box_(box) {
  if (capacity == 0) throw ContractError("replay buffer capacity must be positive");
  if (dim == 0) throw ContractError("replay buffer dimension must be positive");
  if (!box.valid()) throw ContractError("replay buffer box needs low < high");
  entries_.reserve(std::min<std::size_t>(capacity, 1 << 16) * dim);
}

ReplayBuffer ReplayBuffer::restore(std::size_t capacity, std::size_t dim, DataBox box, std::vector<double> rows) {
  ReplayBuffer b(capacity, dim, box);
  if (rows.size() % dim != 0 || rows.size() / dim > capacity) {
    throw DimensionError("replay buffer rows do not fit capacity " + std::to_string(capacity) + " x " +
                         std::to_string(dim));
  }
  for (double v : rows) {
    if (!std::isfinite(v) || !box.contains(v)) throw InputError("replay buffer entry outside the data box");
  }
  b.entries_ = std::move(rows);
  return b;
}

void ReplayBuffer::write_back(const Tensor& samples, Rng& rng) {
  if (samples.rank() != 2 || samples.cols() != dim_) {
    throw DimensionError("buffer holds D=" + std::to_string(dim_) + " samples, got " + shape_string(samples.shape()));
  }
  for (double v : samples.data()) {
    if (!std::isfinite(v)) throw InputError("refusing to store non-finite samples in the replay buffer");
    if (!box_.contains(v)) throw InputError("refusing to store samples outside the data box");
  }
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    auto row = samples.row(i);
    if (fill() < capacity_) {
      entries_.insert(entries_.end(), row.begin(), row.end());
    } else {
      const std::size_t slot = std::uniform_int_distribution<std::size_t>(0, capacity_ - 1)(rng);
      std::copy(row.begin(), row.end(), entries_.begin() + static_cast<long>(slot * dim_));
    }
  }
}

Tensor sample_box(std::size_t n, std::size_t dim, DataBox box, Rng& rng) {
  std::uniform_real_distribution<double> uni(box.low, box.high);
  Tensor x(Shape{n, dim});
  for (double& v : x.data()) v = uni(rng);
  return x;
}

ChainStart init_chain(const ReplayBuffer& buffer, std::size_t n, double reinit_prob, Rng& rng) {
  if (n == 0) throw ContractError("init_chain: batch size must be positive");
  if (!(reinit_prob >= 0.0 && reinit_prob <= 1.0)) throw ContractError("init_chain: reinit_prob must lie in [0, 1]");
  const std::size_t d = buffer.dim();
  const DataBox box = buffer.box();
  std::uniform_real_distribution<double> uni01(0.0, 1.0);
  std::uniform_real_distribution<double> uni(box.low, box.high);
  ChainStart start{Tensor(Shape{n, d}), 0};
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = start.states.row(i);
    const bool prior = buffer.empty() || uni01(rng) < reinit_prob;
    if (prior) {
      for (double& v : dst) v = uni(rng);
      ++start.from_prior;
    } else {
      const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, buffer.fill() - 1)(rng);
      auto src = buffer.entry(pick);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  return start;
}

EnergyGradFn model_free_energy(const EnergyModel& model) {
  return [&model](const Tensor& x, Tensor& grad) {
    Tensor xin = x;
    xin.clear_grad();
    xin.set_requires_grad(true);
    Graph g;
    Var fe = free_energy(model.forward(g, g.leaf(xin)), model.temperature());
    g.backward(sum(fe));
    grad = Tensor(x.shape());
    if (xin.has_grad()) std::copy(xin.grad().begin(), xin.grad().end(), grad.data().begin());
    return fe.value().values();
  };
}

Tensor sgld_chain(const EnergyGradFn& energy, const Tensor& x0, const SgldConfig& cfg, Rng& rng) {
  cfg.validate();
  if (x0.rank() != 2) throw DimensionError("sgld_chain expects [n x D] states, got " + shape_string(x0.shape()));
  if (!x0.all_finite()) throw InputError("sgld_chain: initial states contain non-finite values");

  Tensor x(x0.shape(), x0.values());
  Tensor grad;
  std::normal_distribution<double> normal;
  const double drift = 0.5 * cfg.step_size * cfg.step_size;
  const double sigma = cfg.noise();
  for (int k = 0; k < cfg.steps; ++k) {
    const std::vector<double> e = energy(x, grad);
    for (double v : e) {
      if (!std::isfinite(v) || std::abs(v) > kDivergenceEnergy) {
        throw SgldDivergence("sgld energy diverged (|E| = " + std::to_string(std::abs(v)) + ") at step " +
                                 std::to_string(k),
                             k);
      }
    }
    if (!grad.all_finite()) throw SgldDivergence("sgld gradient is non-finite at step " + std::to_string(k), k);
    auto xs = x.data();
    auto gs = grad.data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double gi = gs[i];
      if (cfg.clip_grad) gi = std::clamp(gi, -*cfg.clip_grad, *cfg.clip_grad);
      xs[i] = cfg.box.clamp(xs[i] - drift * gi + sigma * normal(rng));
    }
  }
  return x;
}

Tensor sgld_chain(const EnergyModel& model, const Tensor& x0, const SgldConfig& cfg, Rng& rng) {
  if (x0.rank() != 2 || x0.cols() != model.input_dim()) {
    throw DimensionError("sgld_chain: model expects D=" + std::to_string(model.input_dim()) + ", got " +
                         shape_string(x0.shape()));
  }
  return sgld_chain(model_free_energy(model), x0, cfg, rng);
}

}  // namespace jemcal
