#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "jemcal/error.hpp"
#include "jemcal/training.hpp"
#include "oracles.hpp"

using namespace jemcal;

namespace {

ModelSpec small_spec(std::size_t d, std::size_t k, std::vector<std::size_t> hidden = {8, 8}) {
  ModelSpec spec;
  spec.input_dim = d;
  spec.num_classes = k;
  spec.hidden = std::move(hidden);
  return spec;
}

Dataset mixture(std::size_t k, double separation, std::size_t per_class, std::uint64_t seed) {
  Dataset d = split(gen_gaussian_mixture(k, 2, per_class, separation, seed), {0.6, 0.2, 0.2}, seed);
  d = standardize(std::move(d));
  clip_to_box(d, DataBox{});
  return d;
}

TrainConfig quick_config(TrainMode mode, int epochs = 4) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.lr.warmup_steps = 20;
  cfg.lr.decay_epochs = {2, 3};
  cfg.sgld.steps = 10;
  cfg.buffer_capacity = 500;
  cfg.seed = 7;
  return cfg;
}

oracle::Mlp to_oracle(const EnergyModel& m) {
  oracle::Mlp o;
  o.widths.push_back(m.input_dim());
  for (const auto& l : m.layers()) {
    o.widths.push_back(l.weight.cols());
    o.w.push_back(l.weight.values());
    o.b.push_back(l.bias.values());
  }
  o.tanh = m.spec().activation == Activation::tanh;
  o.slope = m.spec().leaky_slope;
  return o;
}

// CE(x+, y) + lambda * (mean E(x+) - mean E(x~)) from plain loops.
double surrogate(const oracle::Mlp& o, double t, const Tensor& x, std::span<const Label> y, const Tensor& neg,
                 double lambda) {
  auto energy = [&](std::span<const double> row) {
    auto f = o.forward(row);
    for (double& v : f) v /= t;
    return -t * static_cast<double>(oracle::lse_direct(f));
  };
  double ce = 0.0, pos = 0.0, negs = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto f = o.forward(x.row(i));
    for (double& v : f) v /= t;
    ce += static_cast<double>(oracle::lse_direct(f)) - f[static_cast<std::size_t>(y[i])];
    pos += energy(x.row(i));
  }
  for (std::size_t i = 0; i < neg.rows(); ++i) negs += energy(neg.row(i));
  const double n = static_cast<double>(x.rows());
  return ce / n + lambda * (pos / n - negs / static_cast<double>(neg.rows()));
}

}  // namespace

TEST(LrSchedule, WarmupAndDecay) {
  LrSchedule s;
  EXPECT_EQ(s.rate(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(s.rate(250, 0), 0.1 * 250.0 / 1000.0);
  EXPECT_DOUBLE_EQ(s.rate(999, 0), 0.1 * 999.0 / 1000.0);
  EXPECT_EQ(s.rate(1000, 0), 0.1);
  EXPECT_EQ(s.rate(5000, 39), 0.1);
  EXPECT_DOUBLE_EQ(s.rate(5000, 40), 0.1 * 0.2);
  EXPECT_DOUBLE_EQ(s.rate(9000, 80), 0.1 * 0.2 * 0.2);
  EXPECT_DOUBLE_EQ(s.rate(9000, 149), 0.1 * 0.2 * 0.2 * 0.2);
  LrSchedule none;
  none.warmup_steps = 0;
  EXPECT_EQ(none.rate(0, 0), 0.1);
}

TEST(TrainConfig, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  TrainConfig c;
  c.epochs = -1;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.gen_weight = -1.0;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.sgld.step_size = 0.0;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.gen_weight = 3.0;
  EXPECT_EQ(c.effective_gen_weight(), 0.0);
  c.mode = TrainMode::jem;
  EXPECT_EQ(c.effective_gen_weight(), 3.0);
  EXPECT_EQ(train_mode_from_string(to_string(TrainMode::jem)), TrainMode::jem);
  EXPECT_THROW(train_mode_from_string("ebm"), Error);
}

TEST(JointLoss, ZeroWeightIsCrossEntropyBitForBit) {
  Rng rng = make_rng(100);
  EnergyModel a = EnergyModel::init(small_spec(2, 3), rng);
  EnergyModel b = a;
  const Tensor x = Tensor::randn({16, 2}, rng);
  std::vector<Label> y(16);
  for (std::size_t i = 0; i < 16; ++i) y[i] = static_cast<Label>(i % 3);
  NegativeSampler sampler(2, SgldConfig{}, 100, make_rng(1));
  const JointLossGrads j = joint_loss_grads(a, x, y, sampler, 0.0);
  const JointLossGrads c = cross_entropy_grads(b, x, y);
  EXPECT_EQ(j.ce, c.ce);
  EXPECT_EQ(j.gen, 0.0);
  EXPECT_EQ(j.grads, c.grads);
  EXPECT_EQ(sampler.buffer().fill(), 0u);
}

TEST(JointLoss, FrozenNegativesMatchFiniteDifferences) {
  Rng rng = make_rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    ModelSpec spec = small_spec(2, 3, {5});
    spec.temperature = trial % 2 ? 1.0 : 1.7;
    spec.activation = trial % 3 ? Activation::tanh : Activation::leaky_relu;
    EnergyModel m = EnergyModel::init(spec, rng);
    const Tensor x = Tensor::randn({6, 2}, rng);
    const Tensor neg = Tensor::randn({6, 2}, rng, 1.5);
    std::vector<Label> y{0, 1, 2, 2, 1, 0};
    const double lambda = 0.75;
    const JointLossGrads g = joint_loss_grads(m, x, y, neg, lambda);

    const oracle::Mlp base = to_oracle(m);
    EXPECT_NEAR(g.ce + lambda * g.gen, surrogate(base, spec.temperature, x, y, neg, lambda), 1e-12);
    for (std::size_t p = 0; p < base.w.size() * 2; ++p) {
      const bool is_w = p % 2 == 0;
      const std::size_t layer = p / 2;
      auto f = [&](const std::vector<double>& v) {
        oracle::Mlp o = base;
        (is_w ? o.w : o.b)[layer] = v;
        return surrogate(o, spec.temperature, x, y, neg, lambda);
      };
      const auto fd = oracle::central_diff(f, is_w ? base.w[layer] : base.b[layer]);
      EXPECT_LT(oracle::max_rel_err(g.grads[p], fd), 1e-4) << "trial " << trial << " param " << p;
    }
  }
}

TEST(JointLoss, SingleClassReducesToEnergyDifference) {
  std::vector<Layer> layers;
  layers.push_back({Tensor::matrix(2, 1, {0.5, -1.5}), Tensor::vector({0.25})});
  EnergyModel m(small_spec(2, 1, {}), std::move(layers));
  const Tensor pos = Tensor::matrix({{1.0, 2.0}});
  const Tensor neg = Tensor::matrix({{-0.5, 0.75}});
  const std::vector<Label> y{0};
  const double lambda = 2.0;
  const JointLossGrads g = joint_loss_grads(m, pos, y, neg, lambda);
  EXPECT_EQ(g.ce, 0.0);
  // E = -f for a single logit, f = w.x + b.
  const double fp = 0.5 * 1.0 - 1.5 * 2.0 + 0.25;
  const double fn = 0.5 * -0.5 - 1.5 * 0.75 + 0.25;
  EXPECT_NEAR(g.gen, -(fp - fn), 1e-15);
  EXPECT_NEAR(g.grads[0][0], lambda * (-1.0 - 0.5), 1e-15);
  EXPECT_NEAR(g.grads[0][1], lambda * (-2.0 - -0.75), 1e-15);
  EXPECT_NEAR(g.grads[1][0], 0.0, 1e-15);
}

TEST(JointLoss, DivergenceSkipsTheGenerativeTerm) {
  std::vector<Layer> layers;
  layers.push_back({Tensor::matrix(1, 2, {1e7, -1e7}), Tensor::vector({0.0, 0.0})});
  EnergyModel m(small_spec(1, 2, {}), std::move(layers));
  EnergyModel ref = m;
  SgldConfig cfg;
  cfg.steps = 3;
  NegativeSampler sampler(1, cfg, 50, make_rng(2));
  const Tensor x = Tensor::matrix({{0.5}, {-0.5}});
  const std::vector<Label> y{0, 1};
  const JointLossGrads g = joint_loss_grads(m, x, y, sampler, 1.0);
  const JointLossGrads c = cross_entropy_grads(ref, x, y);
  EXPECT_TRUE(g.generative_skipped);
  EXPECT_EQ(g.gen, 0.0);
  EXPECT_EQ(g.grads, c.grads);
  EXPECT_EQ(sampler.divergences(), 1u);
  EXPECT_EQ(sampler.consecutive_divergences(), 1);
  EXPECT_EQ(sampler.next_step_size(), 0.5 * cfg.step_size);
  EXPECT_EQ(sampler.buffer().fill(), 0u);
}

TEST(NegativeSampler, StepSizeRecoversAfterTenCalls) {
  std::vector<Layer> huge;
  huge.push_back({Tensor::matrix(1, 2, {1e7, -1e7}), Tensor::vector({0.0, 0.0})});
  const EnergyModel bad(small_spec(1, 2, {}), std::move(huge));
  const EnergyModel calm = EnergyModel::zeros(small_spec(1, 2, {}));
  SgldConfig cfg;
  cfg.steps = 2;
  NegativeSampler s(1, cfg, 50, make_rng(3));
  EXPECT_FALSE(s.draw(bad, 4));
  for (int i = 0; i < NegativeSampler::kHalvedSteps; ++i) {
    EXPECT_EQ(s.next_step_size(), 0.5 * cfg.step_size);
    EXPECT_TRUE(s.draw(calm, 4));
  }
  EXPECT_EQ(s.next_step_size(), cfg.step_size);
  EXPECT_EQ(s.consecutive_divergences(), 0);
  EXPECT_EQ(s.divergences(), 1u);
  EXPECT_EQ(s.buffer().fill(), 40u);
}

TEST(Train, SeparableBlobsAreLearned) {
  Dataset d = mixture(2, 10.0, 500, 102);
  TrainConfig cfg = quick_config(TrainMode::softmax, 20);
  cfg.lr.decay_epochs = {};
  const TrainResult r = train(d, small_spec(2, 2), cfg);
  const double acc = evaluate(r.model, d, Split::test).accuracy;
  EXPECT_GE(acc, 0.99);

  const auto train_y = d.labels_of(Split::train);
  oracle::Logistic ref;
  ref.fit(oracle::rows_of(d.features_of(Split::train)), std::vector<int>(train_y.begin(), train_y.end()), 300, 0.5);
  const Tensor xt = d.features_of(Split::test);
  const auto yt = d.labels_of(Split::test);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < yt.size(); ++i) hits += ref.predict(xt.row(i)) == yt[i];
  EXPECT_GE(static_cast<double>(hits) / static_cast<double>(yt.size()), 0.99);
}

TEST(Train, ZeroWeightMatchesReferenceLoopBitForBit) {
  const Dataset d = mixture(3, 2.5, 100, 103);
  const TrainConfig soft = quick_config(TrainMode::softmax);
  TrainConfig jem_off = quick_config(TrainMode::jem);
  jem_off.gen_weight = 0.0;
  const TrainResult ref = train_softmax_reference(d, small_spec(2, 3), soft);
  for (const TrainConfig& cfg : {soft, jem_off}) {
    const TrainResult r = train(d, small_spec(2, 3), cfg);
    ASSERT_EQ(r.model.parameters().size(), ref.model.parameters().size());
    for (std::size_t p = 0; p < r.model.parameters().size(); ++p) {
      EXPECT_EQ(r.model.parameters()[p]->values(), ref.model.parameters()[p]->values());
    }
    std::ostringstream a, b;
    r.log.write_csv(a);
    ref.log.write_csv(b);
    EXPECT_EQ(a.str(), b.str());
  }
}

TEST(Train, SameSeedGivesIdenticalLogs) {
  const Dataset d = mixture(3, 2.5, 80, 104);
  for (TrainMode mode : {TrainMode::softmax, TrainMode::jem}) {
    const TrainConfig cfg = quick_config(mode);
    std::ostringstream a, b;
    train(d, small_spec(2, 3), cfg).log.write_csv(a, "run");
    train(d, small_spec(2, 3), cfg).log.write_csv(b, "run");
    EXPECT_EQ(a.str(), b.str());
    TrainConfig other = cfg;
    other.seed = 8;
    std::ostringstream c;
    train(d, small_spec(2, 3), other).log.write_csv(c, "run");
    EXPECT_NE(a.str(), c.str());
  }
}

TEST(Train, LogInvariants) {
  const Dataset d = mixture(4, 2.0, 80, 105);
  TrainConfig cfg = quick_config(TrainMode::jem, 6);
  cfg.eval_every = 2;
  const TrainResult r = train(d, small_spec(2, 4), cfg);
  ASSERT_EQ(r.log.records.size(), 3u);
  int prev = 0;
  for (const auto& rec : r.log.records) {
    EXPECT_GT(rec.epoch, prev);
    prev = rec.epoch;
    EXPECT_GE(rec.ce_loss, 0.0);
    EXPECT_GE(rec.test_acc, 0.0);
    EXPECT_LE(rec.test_acc, 1.0);
    EXPECT_GE(rec.test_ece, 0.0);
    EXPECT_LE(rec.test_ece, 1.0);
    EXPECT_GE(rec.test_nll, 0.0);
    EXPECT_TRUE(std::isfinite(rec.gen_loss));
  }
  EXPECT_EQ(r.log.records.back().epoch, 6);
  ASSERT_TRUE(r.buffer);
  EXPECT_GT(r.buffer->fill(), 0u);
  for (double v : r.buffer->rows()) EXPECT_TRUE(r.buffer->box().contains(v));
}

TEST(Train, LogCsvLayout) {
  TrainLog log;
  log.records.push_back({1, 0.5, -0.25, 0.75, 0.6, 0.05, 2});
  std::ostringstream out;
  log.write_csv(out, "line one\nline two");
  EXPECT_EQ(out.str(),
            "# line one\n# line two\n"
            "epoch,ce_loss,gen_loss,test_acc,test_nll,test_ece,sgld_divergences\n"
            "1,0.5,-0.25,0.75,0.6,0.05,2\n");
}

TEST(Train, RunawayLearningRateAborts) {
  const Dataset d = mixture(3, 2.5, 80, 106);
  TrainConfig cfg = quick_config(TrainMode::jem, 30);
  cfg.lr.base = 1e8;
  cfg.lr.warmup_steps = 0;
  cfg.divergence_budget = 2;
  EXPECT_THROW(train(d, small_spec(2, 3), cfg), TrainingAborted);
}

TEST(Train, DimensionMismatchIsRejected) {
  const Dataset d = mixture(3, 2.5, 40, 107);
  EXPECT_THROW(train(d, small_spec(3, 3), quick_config(TrainMode::softmax)), DimensionError);
  EXPECT_THROW(train(d, small_spec(2, 4), quick_config(TrainMode::softmax)), DimensionError);
}

TEST(Evaluate, UniformPredictor) {
  const Dataset d = mixture(4, 2.5, 50, 108);
  const EnergyModel m = EnergyModel::zeros(small_spec(2, 4));
  const Evaluation e = evaluate(m, d, Split::all);
  EXPECT_EQ(e.accuracy, 0.25);
  EXPECT_EQ(e.nll, std::log(4.0));
}

TEST(Evaluate, PerfectOneHotPredictor) {
  std::vector<Layer> layers;
  layers.push_back({Tensor::matrix(2, 2, {1000.0, 0.0, 0.0, 1000.0}), Tensor::vector({0.0, 0.0})});
  const EnergyModel m(small_spec(2, 2, {}), std::move(layers));
  const Tensor x = Tensor::matrix({{1, 0}, {0, 1}, {1, 0}, {0, 1}});
  const std::vector<Label> y{0, 1, 0, 1};
  const Evaluation e = evaluate(m, x, y, 15);
  EXPECT_EQ(e.accuracy, 1.0);
  EXPECT_EQ(e.nll, 0.0);
  EXPECT_EQ(e.ece, 0.0);
}

TEST(Evaluate, AccuracyMatchesRecount) {
  const Dataset d = mixture(3, 2.0, 100, 109);
  const TrainResult r = train(d, small_spec(2, 3), quick_config(TrainMode::softmax));
  const Evaluation e = evaluate(r.model, d, Split::test);
  const oracle::Mlp o = to_oracle(r.model);
  const Tensor x = d.features_of(Split::test);
  const auto y = d.labels_of(Split::test);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto f = o.forward(x.row(i));
    hits += static_cast<Label>(std::max_element(f.begin(), f.end()) - f.begin()) == y[i];
  }
  EXPECT_EQ(e.accuracy, static_cast<double>(hits) / static_cast<double>(y.size()));
  EXPECT_EQ(e.predictions.size(), y.size());
  ASSERT_TRUE(e.predictions.logits);
}
