#include <gtest/gtest.h>

#include <cmath>

#include "jemcal/error.hpp"
#include "jemcal/model.hpp"
#include "oracles.hpp"

using namespace jemcal;

namespace {

// Single affine layer D -> K with the given weight [D x K] and bias.
EnergyModel linear(std::size_t d, std::size_t k, std::vector<double> w, std::vector<double> b, double t = 1.0) {
  ModelSpec spec;
  spec.input_dim = d;
  spec.num_classes = k;
  spec.hidden = {};
  spec.temperature = t;
  std::vector<Layer> layers;
  layers.push_back({Tensor::matrix(d, k, std::move(w)), Tensor::vector(std::move(b))});
  return EnergyModel(spec, std::move(layers));
}

// A model whose logits equal the input row: W = I, b = 0.
EnergyModel identity(std::size_t k, double t = 1.0) {
  std::vector<double> w(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) w[i * k + i] = 1.0;
  return linear(k, k, w, std::vector<double>(k, 0.0), t);
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

EnergyModel random_model(Rng& rng, std::size_t d, std::size_t k, double t) {
  ModelSpec spec;
  spec.input_dim = d;
  spec.num_classes = k;
  spec.hidden = {5, 4};
  spec.temperature = t;
  spec.activation = std::uniform_int_distribution<int>(0, 1)(rng) ? Activation::tanh : Activation::leaky_relu;
  EnergyModel m = EnergyModel::init(spec, rng);
  for (Tensor* p : m.parameters()) {
    for (double& v : p->data()) v += std::normal_distribution<double>(0.0, 0.3)(rng);
  }
  return m;
}

}  // namespace

TEST(Logits, ZeroWeightModelGivesZeroLogits) {
  ModelSpec spec;
  spec.input_dim = 3;
  spec.num_classes = 4;
  const EnergyModel m = EnergyModel::zeros(spec);
  Rng rng = make_rng(10);
  const auto out = logits(m, Tensor::randn({7, 3}, rng, 5.0));
  EXPECT_EQ(out.values.shape(), (Shape{7, 4}));
  for (double v : out.values.values()) EXPECT_EQ(v, 0.0);
}

TEST(Logits, IdentityNetwork) {
  const auto out = logits(identity(2), Tensor::matrix({{1, 2}}));
  EXPECT_EQ(out.values.values(), (std::vector<double>{1, 2}));
}

TEST(Logits, SeededModelMatchesMatrixArithmeticAndGolden) {
  ModelSpec spec;
  spec.input_dim = 2;
  spec.hidden = {16};
  spec.num_classes = 3;
  Rng rng = make_rng(2024, streams::kInit);
  const EnergyModel m = EnergyModel::init(spec, rng);
  const Tensor x = Tensor::matrix({{0.5, -1.0}, {2.0, 0.25}, {-1.5, -0.75}});
  const auto out = logits(m, x);
  const oracle::Mlp o = to_oracle(m);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto ref = o.forward(x.row(i));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(out.values.at(i, k), ref[k], 1e-13);
  }
  const std::vector<double> golden{1.9547707156527783,   2.0215807488160942,  -1.3518651267337125,
                                   -1.2219727673923761,  -0.93485062496013638, -0.13836520880882047,
                                   0.34512389841143676,  0.89170137688171258,  -1.6036412663435602};
  ASSERT_EQ(golden.size(), out.values.size());
  for (std::size_t i = 0; i < golden.size(); ++i) EXPECT_NEAR(out.values[i], golden[i], 1e-12) << i;
}

TEST(Logits, RandomModelsMatchMatrixArithmetic) {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const EnergyModel m = random_model(rng, 3, 4, 1.0);
    const Tensor x = Tensor::randn({5, 3}, rng, 2.0);
    const auto out = logits(m, x);
    const oracle::Mlp o = to_oracle(m);
    for (std::size_t i = 0; i < 5; ++i) {
      const auto ref = o.forward(x.row(i));
      for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(out.values.at(i, k), ref[k], 1e-12);
    }
  }
}

TEST(Logits, NonFiniteInputIsRejected) {
  const EnergyModel m = identity(2);
  EXPECT_THROW(logits(m, Tensor::matrix({{1, NAN}})), InputError);
  EXPECT_THROW(logits(m, Tensor::matrix({{INFINITY, 0}})), InputError);
}

TEST(Logits, FeatureCountMismatchIsRejected) {
  EXPECT_THROW(logits(identity(2), Tensor::matrix({{1, 2, 3}})), DimensionError);
}

TEST(EnergyModel, ShapesMustChain) {
  ModelSpec spec;
  spec.input_dim = 2;
  spec.num_classes = 3;
  spec.hidden = {};
  std::vector<Layer> bad;
  bad.push_back({Tensor(Shape{2, 4}), Tensor(Shape{4})});
  EXPECT_THROW(EnergyModel(spec, bad), DimensionError);
}

TEST(EnergyModel, TemperatureMustBePositive) {
  EnergyModel m = identity(2);
  EXPECT_THROW(m.set_temperature(0.0), ContractError);
  EXPECT_THROW(m.set_temperature(-1.0), ContractError);
}

TEST(ClassEnergy, Definition) {
  EXPECT_EQ(class_energy(identity(2), Tensor::matrix({{1, 2}}), 1)[0], -2.0);
  EXPECT_EQ(class_energy(identity(2, 2.0), Tensor::matrix({{1, 2}}), 0)[0], -0.5);
}

TEST(ClassEnergy, OutOfRangeLabel) {
  EXPECT_THROW(class_energy(identity(2), Tensor::matrix({{1, 2}}), 2), IndexError);
  EXPECT_THROW(class_energy(identity(2), Tensor::matrix({{1, 2}}), -1), IndexError);
}

TEST(ClassEnergy, EqualsNegatedScaledLogitForRandomCases) {
  Rng rng = make_rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const double t = std::uniform_real_distribution<double>(0.2, 4.0)(rng);
    const EnergyModel m = random_model(rng, 2, 3, t);
    const Tensor x = Tensor::randn({4, 2}, rng);
    const Label y = std::uniform_int_distribution<int>(0, 2)(rng);
    const auto e = class_energy(m, x, y);
    const auto f = logits(m, x).values;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(e[i], -f.at(i, static_cast<std::size_t>(y)) / t);
  }
}

TEST(FreeEnergy, ZeroLogitsGiveMinusLogK) {
  for (std::size_t k : {2u, 3u, 7u}) {
    EXPECT_NEAR(free_energy(identity(k), Tensor(Shape{1, k}))[0], -std::log(static_cast<double>(k)), 1e-15);
  }
}

TEST(FreeEnergy, DirectSummation) {
  const double e = free_energy(identity(3), Tensor::matrix({{1, 2, 3}}))[0];
  const std::vector<double> row{1, 2, 3};
  EXPECT_NEAR(e, -3.40760596, 1e-8);
  EXPECT_NEAR(e, -static_cast<double>(oracle::lse_direct(row)), 1e-14);
}

TEST(FreeEnergy, SingleClassIsMinusLogit) {
  for (double t : {0.3, 1.0, 5.0}) {
    const EnergyModel m = linear(1, 1, {1.0}, {0.0}, t);
    EXPECT_NEAR(free_energy(m, Tensor::matrix({{2.75}}))[0], -2.75, 1e-14);
  }
}

TEST(FreeEnergy, StrictlyDecreasesWhenALogitIncreases) {
  Rng rng = make_rng(13);
  std::uniform_int_distribution<std::size_t> pick(0, 3);
  std::uniform_real_distribution<double> bump(1e-3, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const EnergyModel m = identity(4, std::uniform_real_distribution<double>(0.5, 2.0)(rng));
    Tensor x = Tensor::randn({1, 4}, rng, 3.0);
    const double before = free_energy(m, x)[0];
    x[pick(rng)] += bump(rng);
    EXPECT_LT(free_energy(m, x)[0], before);
  }
}

TEST(ClassPosterior, Examples) {
  const Tensor uni = class_posterior(identity(4), Tensor(Shape{1, 4}));
  for (double p : uni.values()) EXPECT_DOUBLE_EQ(p, 0.25);
  const Tensor p = class_posterior(identity(2), Tensor::matrix({{0, std::log(3.0)}}));
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(ClassPosterior, ShiftInvariantAndRowStochastic) {
  Rng rng = make_rng(14);
  const EnergyModel m = identity(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = Tensor::randn({3, 5}, rng, 4.0);
    Tensor shifted = x;
    for (double& v : shifted.data()) v += 7.0;
    const Tensor a = class_posterior(m, x);
    const Tensor b = class_posterior(m, shifted);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (double v : a.row(r)) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(LogDensities, Examples) {
  EXPECT_EQ(log_joint_unnorm(identity(2), Tensor::matrix({{1, 2}}), 0)[0], 1.0);
  EXPECT_NEAR(log_marginal_unnorm(identity(2), Tensor(Shape{1, 2}))[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(log_marginal_unnorm(identity(3), Tensor::matrix({{1, 2, 3}}))[0], 3.40760596, 1e-8);
}

TEST(LogDensities, IdentitiesOverRandomModels) {
  Rng rng = make_rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const double t = std::uniform_real_distribution<double>(0.25, 4.0)(rng);
    const EnergyModel m = random_model(rng, 3, 4, t);
    const Tensor x = Tensor::randn({6, 3}, rng, 2.0);
    const auto marg = log_marginal_unnorm(m, x);
    const auto fe = free_energy(m, x);
    const Tensor post = class_posterior(m, x);
    std::vector<double> mass(6, 0.0);
    for (Label y = 0; y < 4; ++y) {
      const auto joint = log_joint_unnorm(m, x, y);
      const auto energy = class_energy(m, x, y);
      for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(joint[i], -energy[i]);
        EXPECT_NEAR(std::log(post.at(i, static_cast<std::size_t>(y))), joint[i] - marg[i], 1e-10);
        mass[i] += std::exp(joint[i]);
      }
    }
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_LE(oracle::rel_err(mass[i], std::exp(marg[i]), 0.0), 1e-12);
      EXPECT_NEAR(marg[i], -fe[i] / t, 1e-12 * std::max(1.0, std::abs(marg[i])));
    }
  }
}

TEST(InputGradient, ZeroWeightModelGivesZero) {
  ModelSpec spec;
  spec.input_dim = 3;
  spec.num_classes = 2;
  Rng rng = make_rng(16);
  const Tensor g = input_gradient(EnergyModel::zeros(spec), Tensor::randn({4, 3}, rng));
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(InputGradient, LinearSingleClassIsMinusW) {
  const EnergyModel m = linear(3, 1, {0.5, -2.0, 1.25}, {0.3}, 1.7);
  Rng rng = make_rng(17);
  const Tensor g = input_gradient(m, Tensor::randn({5, 3}, rng));
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(g.at(i, 0), -0.5, 1e-14);
    EXPECT_NEAR(g.at(i, 1), 2.0, 1e-14);
    EXPECT_NEAR(g.at(i, 2), -1.25, 1e-14);
  }
}

TEST(InputGradient, MatchesFiniteDifferences) {
  Rng rng = make_rng(18);
  for (int trial = 0; trial < 50; ++trial) {
    const EnergyModel m = random_model(rng, 3, 4, std::uniform_real_distribution<double>(0.5, 2.0)(rng));
    const Tensor x = Tensor::randn({2, 3}, rng);
    const Tensor g = input_gradient(m, x);
    for (std::size_t i = 0; i < 2; ++i) {
      const auto row = x.row(i);
      auto f = [&](const std::vector<double>& v) { return free_energy(m, Tensor(Shape{1, 3}, v))[0]; };
      const auto fd = oracle::central_diff(f, std::vector<double>(row.begin(), row.end()));
      const auto an = g.row(i);
      EXPECT_LT(oracle::max_rel_err(an, fd), 1e-4) << "trial " << trial;
    }
  }
}

TEST(EnergyModel, EvaluationIsDeterministic) {
  Rng rng = make_rng(19);
  const EnergyModel m = random_model(rng, 2, 3, 1.0);
  const Tensor x = Tensor::randn({10, 2}, rng);
  EXPECT_EQ(logits(m, x).values.values(), logits(m, x).values.values());
  EXPECT_EQ(input_gradient(m, x).values(), input_gradient(m, x).values());
}
