#include "jemcal/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "jemcal/error.hpp"
#include "jemcal/numfmt.hpp"

namespace jemcal {

std::string to_string(TrainMode m) { return m == TrainMode::jem ? "jem" : "softmax"; }

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "softmax") return TrainMode::softmax;
  if (name == "jem") return TrainMode::jem;
  throw ContractError("unknown mode '" + name + "' (expected softmax or jem)");
}

double LrSchedule::rate(long step, int epoch) const {
  double r = base;
  if (warmup_steps > 0 && step < warmup_steps) {
    r = base * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  for (int e : decay_epochs) {
    if (epoch >= e) r *= decay_factor;
  }
  return r;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ContractError("epochs must be >= 0");
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  if (!(lr.base >= 0.0) || lr.warmup_steps < 0 || !(lr.decay_factor > 0.0)) {
    throw ContractError("invalid learning-rate schedule");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("momentum must lie in [0, 1)");
  if (!(gen_weight >= 0.0) || !std::isfinite(gen_weight)) throw ContractError("gen_weight must be >= 0");
  if (buffer_capacity == 0) throw ContractError("buffer_capacity must be positive");
  if (eval_every < 1) throw ContractError("eval_every must be >= 1");
  if (bins == 0) throw ContractError("bins must be positive");
  if (divergence_budget < 0) throw ContractError("divergence_budget must be >= 0");
  sgld.validate();
}

void TrainLog::write_csv(std::ostream& out, const std::string& header_comment) const {
  if (!header_comment.empty()) {
    std::istringstream lines(header_comment);
    std::string line;
    while (std::getline(lines, line)) out << "# " << line << '\n';
  }
  out << "epoch,ce_loss,gen_loss,test_acc,test_nll,test_ece,sgld_divergences\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << format_double(r.ce_loss) << ',' << format_double(r.gen_loss) << ','
        << format_double(r.test_acc) << ',' << format_double(r.test_nll) << ',' << format_double(r.test_ece) << ','
        << r.sgld_divergences << '\n';
  }
}

NegativeSampler::NegativeSampler(std::size_t dim, const SgldConfig& cfg, std::size_t capacity, Rng rng)
    : cfg_(cfg), buffer_(capacity, dim, cfg.box), rng_(std::move(rng)) {
  cfg_.validate();
}

std::optional<Tensor> NegativeSampler::draw(const EnergyModel& model, std::size_t n) {
  ChainStart start = init_chain(buffer_, n, cfg_.reinit_prob, rng_);
  SgldConfig c = cfg_;
  if (halved_remaining_ > 0) {
    c.step_size *= 0.5;
    --halved_remaining_;
  }
  try {
    Tensor out = sgld_chain(model, start.states, c, rng_);
    buffer_.write_back(out, rng_);
    consecutive_ = 0;
    return out;
  } catch (const SgldDivergence&) {
    ++divergences_;
    ++consecutive_;
    halved_remaining_ = kHalvedSteps;
    return std::nullopt;
  }
}

namespace {

std::vector<std::vector<double>> collect_grads(const EnergyModel& model) {
  std::vector<std::vector<double>> out;
  for (const Tensor* p : model.parameters()) {
    auto g = p->grad();
    out.emplace_back(g.begin(), g.end());
    if (out.back().empty()) out.back().assign(p->size(), 0.0);
  }
  return out;
}

Var scaled_logits(Var logits, double temperature) {
  return temperature == 1.0 ? logits : (1.0 / temperature) * logits;
}

}  // namespace

JointLossGrads cross_entropy_grads(EnergyModel& model, const Tensor& x, std::span<const Label> y) {
  if (x.rows() == 0) throw ContractError("empty batch");
  model.zero_grad();
  Graph g;
  Var z = scaled_logits(model.forward_trainable(g, g.view(x)), model.temperature());
  Var ce = softmax_cross_entropy(z, y);
  g.backward(ce);
  JointLossGrads r;
  r.ce = ce.value().item();
  r.grads = collect_grads(model);
  return r;
}

JointLossGrads joint_loss_grads(EnergyModel& model, const Tensor& x, std::span<const Label> y,
                                const Tensor& negatives, double gen_weight) {
  if (gen_weight == 0.0) return cross_entropy_grads(model, x, y);
  if (x.rows() == 0) throw ContractError("empty batch");
  const double t = model.temperature();
  model.zero_grad();
  Graph g;
  Var logits = model.forward_trainable(g, g.view(x));
  Var ce = softmax_cross_entropy(scaled_logits(logits, t), y);
  Var neg_logits = model.forward_trainable(g, g.view(negatives));
  Var gen = mean(free_energy(logits, t)) - mean(free_energy(neg_logits, t));
  Var loss = ce + gen_weight * gen;
  g.backward(loss);
  JointLossGrads r;
  r.ce = ce.value().item();
  r.gen = gen.value().item();
  r.grads = collect_grads(model);
  return r;
}

JointLossGrads joint_loss_grads(EnergyModel& model, const Tensor& x, std::span<const Label> y,
                                NegativeSampler& sampler, double gen_weight) {
  if (gen_weight == 0.0) return cross_entropy_grads(model, x, y);
  std::optional<Tensor> negatives = sampler.draw(model, x.rows());
  if (!negatives) {
    JointLossGrads r = cross_entropy_grads(model, x, y);
    r.generative_skipped = true;
    return r;
  }
  return joint_loss_grads(model, x, y, *negatives, gen_weight);
}

Evaluation evaluate(const EnergyModel& model, const Tensor& x, std::span<const Label> y, std::size_t bins) {
  if (x.rows() == 0) throw ContractError("evaluate: empty split");
  Tensor z = logits(model, x).values;
  const double t = model.temperature();
  if (t != 1.0) {
    for (double& v : z.data()) v /= t;
  }
  Evaluation e;
  e.predictions = PredictionSet::from_logits(std::move(z), std::vector<Label>(y.begin(), y.end()));
  e.predictions.validate();
  e.accuracy = accuracy(e.predictions);
  const NllStats s = nll_stats(e.predictions);
  e.nll = s.value;
  e.nll_floored = s.floored;
  e.ece = ece(e.predictions, bins);
  return e;
}

Evaluation evaluate(const EnergyModel& model, const Dataset& data, Split split, std::size_t bins) {
  const auto idx = data.indices(split);
  if (idx.empty()) throw ContractError("evaluate: the " + to_string(split) + " split is empty");
  return evaluate(model, gather_rows(data.features, idx), data.labels_of(split), bins);
}

namespace {

void check_dims(const Dataset& data, const ModelSpec& spec) {
  if (data.dim() != spec.input_dim) {
    throw DimensionError("model expects D=" + std::to_string(spec.input_dim) + " but the dataset has D=" +
                         std::to_string(data.dim()));
  }
  if (data.num_classes != spec.num_classes) {
    throw DimensionError("model expects K=" + std::to_string(spec.num_classes) + " but the dataset has K=" +
                         std::to_string(data.num_classes));
  }
  if (data.splits.train.empty()) throw ContractError("training split is empty");
  if (data.splits.test.empty()) throw ContractError("test split is empty");
}

struct Momentum {
  std::vector<std::vector<double>> velocity;

  void apply(EnergyModel& model, const std::vector<std::vector<double>>& grads, double lr, double mu) {
    auto params = model.parameters();
    if (velocity.empty()) {
      for (const Tensor* p : params) velocity.emplace_back(p->size(), 0.0);
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto data = params[k]->data();
      auto& v = velocity[k];
      const auto& g = grads[k];
      for (std::size_t i = 0; i < data.size(); ++i) {
        v[i] = mu * v[i] + g[i];
        data[i] -= lr * v[i];
      }
    }
  }
};

TrainRecord eval_record(const EnergyModel& model, const Dataset& data, const TrainConfig& cfg, int epoch, double ce,
                        double gen, std::size_t divergences) {
  const Evaluation e = evaluate(model, data, Split::test, cfg.bins);
  return TrainRecord{epoch, ce, gen, e.accuracy, e.nll, e.ece, divergences};
}

bool should_eval(const TrainConfig& cfg, int epoch) {
  return (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
}

}  // namespace

TrainResult train(const Dataset& data, const ModelSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  check_dims(data, spec);
  Rng init_rng = make_rng(cfg.seed, streams::kInit);
  Rng shuffle_rng = make_rng(cfg.seed, streams::kShuffle);
  EnergyModel model = EnergyModel::init(spec, init_rng);
  const double lambda = cfg.effective_gen_weight();
  std::optional<NegativeSampler> sampler;
  if (cfg.mode == TrainMode::jem) {
    SgldConfig s = cfg.sgld;
    sampler.emplace(spec.input_dim, s, cfg.buffer_capacity, make_rng(cfg.seed, streams::kSgld));
  }

  const Tensor x_train = data.features_of(Split::train);
  const std::vector<Label> y_train = data.labels_of(Split::train);
  std::vector<std::size_t> order(y_train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Momentum opt;
  TrainLog log;
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double ce_sum = 0.0, gen_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor xb = gather_rows(x_train, idx);
      std::vector<Label> yb;
      yb.reserve(idx.size());
      for (std::size_t i : idx) yb.push_back(y_train[i]);

      const JointLossGrads r = cfg.mode == TrainMode::softmax
                                   ? cross_entropy_grads(model, xb, yb)
                                   : joint_loss_grads(model, xb, yb, *sampler, lambda);
      if (!std::isfinite(r.ce) || !std::isfinite(r.gen)) {
        throw TrainingAborted("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                              " (ce=" + std::to_string(r.ce) + ", gen=" + std::to_string(r.gen) + ")");
      }
      if (sampler && sampler->consecutive_divergences() > cfg.divergence_budget) {
        throw TrainingAborted("SGLD diverged " + std::to_string(sampler->consecutive_divergences()) +
                              " times in a row at epoch " + std::to_string(epoch));
      }
      opt.apply(model, r.grads, cfg.lr.rate(step, epoch), cfg.momentum);
      ce_sum += r.ce;
      gen_sum += r.gen;
      ++batches;
      ++step;
    }
    if (should_eval(cfg, epoch)) {
      const double nb = batches ? static_cast<double>(batches) : 1.0;
      log.records.push_back(eval_record(model, data, cfg, epoch + 1, ce_sum / nb, gen_sum / nb,
                                        sampler ? sampler->divergences() : 0));
    }
  }

  TrainResult result{std::move(model), std::move(log), std::nullopt};
  if (sampler) result.buffer = sampler->buffer();
  return result;
}

TrainResult train_softmax_reference(const Dataset& data, const ModelSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  check_dims(data, spec);
  Rng init_rng = make_rng(cfg.seed, streams::kInit);
  Rng shuffle_rng = make_rng(cfg.seed, streams::kShuffle);
  EnergyModel model = EnergyModel::init(spec, init_rng);
  const Tensor x_train = data.features_of(Split::train);
  const std::vector<Label> y_train = data.labels_of(Split::train);
  const std::size_t n = y_train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto params = model.parameters();
  std::vector<std::vector<double>> velocity;
  for (const Tensor* p : params) velocity.emplace_back(p->size(), 0.0);

  TrainLog log;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double ce_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
      std::vector<Label> yb;
      for (std::size_t i : idx) yb.push_back(y_train[i]);
      const JointLossGrads r = cross_entropy_grads(model, gather_rows(x_train, idx), yb);
      const double lr = cfg.lr.rate(step, epoch);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k]->data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          velocity[k][i] = cfg.momentum * velocity[k][i] + r.grads[k][i];
          w[i] -= lr * velocity[k][i];
        }
      }
      ce_sum += r.ce;
      ++batches;
      ++step;
    }
    if (should_eval(cfg, epoch)) {
      const double nb = batches ? static_cast<double>(batches) : 1.0;
      log.records.push_back(eval_record(model, data, cfg, epoch + 1, ce_sum / nb, 0.0, 0));
    }
  }
  return TrainResult{std::move(model), std::move(log), std::nullopt};
}

}  // namespace jemcal
