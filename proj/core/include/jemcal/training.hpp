#pragma once

// Joint training of log p(x, y) = log p(y|x) + log p(x).
//
// The minimised surrogate for one batch is
//   CE(x+, y) + lambda * (mean E(x+) - mean E(x~))
// where E is the free energy, x+ the data batch and x~ an SGLD batch drawn
// from the replay buffer. Its parameter gradient is the cross-entropy
// gradient plus the one-sample contrastive estimate of -grad log p(x).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jemcal/calibration.hpp"
#include "jemcal/data.hpp"
#include "jemcal/model.hpp"
#include "jemcal/sgld.hpp"

namespace jemcal {

enum class TrainMode { softmax, jem };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& name);

struct LrSchedule {
  double base = 0.1;
  long warmup_steps = 1000;
  std::vector<int> decay_epochs{40, 80, 120};
  double decay_factor = 0.2;

  /// base * min(1, step / warmup) * decay_factor^(#decay epochs <= epoch).
  double rate(long step, int epoch) const;

  bool operator==(const LrSchedule&) const = default;
};

struct TrainConfig {
  TrainMode mode = TrainMode::softmax;
  int epochs = 150;
  std::size_t batch_size = 64;
  LrSchedule lr{};
  double momentum = 0.9;
  double gen_weight = 1.0;
  SgldConfig sgld = SgldConfig::low_dim();
  std::size_t buffer_capacity = 10000;
  std::uint64_t seed = 0;
  int eval_every = 1;
  std::size_t bins = kDefaultBins;
  /// Consecutive SGLD divergences tolerated before training aborts.
  int divergence_budget = 50;

  /// lambda; always 0 in softmax mode.
  double effective_gen_weight() const noexcept { return mode == TrainMode::softmax ? 0.0 : gen_weight; }
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

struct TrainRecord {
  int epoch = 0;
  double ce_loss = 0.0;
  double gen_loss = 0.0;
  double test_acc = 0.0;
  double test_nll = 0.0;
  double test_ece = 0.0;
  std::size_t sgld_divergences = 0;
};

struct TrainLog {
  std::vector<TrainRecord> records;

  /// Header comment lines (each prefixed "# "), then
  /// `epoch,ce_loss,gen_loss,test_acc,test_nll,test_ece,sgld_divergences`.
  void write_csv(std::ostream& out, const std::string& header_comment = {}) const;
};

/// Owns the persistent chain state of a JEM run plus the divergence policy:
/// after a divergence the step size is halved for the next
/// `kHalvedSteps` sampler calls.
class NegativeSampler {
 public:
  static constexpr int kHalvedSteps = 10;

  NegativeSampler(std::size_t dim, const SgldConfig& cfg, std::size_t capacity, Rng rng);

  /// init_chain -> sgld_chain -> write_back. nullopt on divergence.
  std::optional<Tensor> draw(const EnergyModel& model, std::size_t n);

  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  std::size_t divergences() const noexcept { return divergences_; }
  int consecutive_divergences() const noexcept { return consecutive_; }
  const SgldConfig& config() const noexcept { return cfg_; }
  /// Step size the next draw will use.
  double next_step_size() const noexcept { return halved_remaining_ > 0 ? 0.5 * cfg_.step_size : cfg_.step_size; }

 private:
  SgldConfig cfg_;
  ReplayBuffer buffer_;
  Rng rng_;
  int halved_remaining_ = 0;
  int consecutive_ = 0;
  std::size_t divergences_ = 0;
};

struct JointLossGrads {
  double ce = 0.0;
  double gen = 0.0;  // mean E(x+) - mean E(x~), before weighting; 0 when skipped
  std::vector<std::vector<double>> grads;  // per parameter, EnergyModel::parameters() order
  bool generative_skipped = false;
};

/// Softmax-only path: CE and its gradient.
JointLossGrads cross_entropy_grads(EnergyModel& model, const Tensor& x, std::span<const Label> y);

/// Joint surrogate with caller-supplied (frozen) negatives.
JointLossGrads joint_loss_grads(EnergyModel& model, const Tensor& x, std::span<const Label> y,
                                const Tensor& negatives, double gen_weight);

/// Joint surrogate drawing negatives from `sampler`. With gen_weight == 0 no
/// sampling happens and the result equals cross_entropy_grads bit for bit.
JointLossGrads joint_loss_grads(EnergyModel& model, const Tensor& x, std::span<const Label> y,
                                NegativeSampler& sampler, double gen_weight);

struct Evaluation {
  double accuracy = 0.0;
  double nll = 0.0;
  double ece = 0.0;
  std::size_t nll_floored = 0;
  PredictionSet predictions;  // logits are f(x)/T
};

Evaluation evaluate(const EnergyModel& model, const Tensor& x, std::span<const Label> y,
                    std::size_t bins = kDefaultBins);
Evaluation evaluate(const EnergyModel& model, const Dataset& data, Split split, std::size_t bins = kDefaultBins);

struct TrainResult {
  EnergyModel model;
  TrainLog log;
  std::optional<ReplayBuffer> buffer;  // JEM runs only
};

/// Full run: seeded init, shuffled minibatches, SGD with momentum on the
/// schedule, test-split evaluation every `eval_every` epochs.
TrainResult train(const Dataset& data, const ModelSpec& spec, const TrainConfig& cfg);

/// Reference softmax-only loop; kept separate from train() so the two can be
/// compared for bit-identity when lambda == 0.
TrainResult train_softmax_reference(const Dataset& data, const ModelSpec& spec, const TrainConfig& cfg);

}  // namespace jemcal
