#include <benchmark/benchmark.h>

#include "jemcal/calibration.hpp"
#include "jemcal/model.hpp"
#include "jemcal/sgld.hpp"
#include "jemcal/training.hpp"

using namespace jemcal;

namespace {

EnergyModel make_model(std::size_t dim, std::size_t width, std::size_t classes) {
  ModelSpec spec;
  spec.input_dim = dim;
  spec.hidden = {width, width};
  spec.num_classes = classes;
  Rng rng = make_rng(1, streams::kInit);
  return EnergyModel::init(spec, rng);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(2, 0);
  const Tensor a = Tensor::randn({n, n}, rng), b = Tensor::randn({n, n}, rng);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(matmul(g.view(a), g.view(b)).value().values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_MlpCrossEntropyBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  EnergyModel model = make_model(2, 64, 4);
  Rng rng = make_rng(3, 0);
  const Tensor x = Tensor::randn({batch, 2}, rng);
  std::vector<Label> y(batch);
  for (std::size_t i = 0; i < batch; ++i) y[i] = static_cast<Label>(i % 4);
  for (auto _ : state) benchmark::DoNotOptimize(cross_entropy_grads(model, x, y).ce);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_MlpCrossEntropyBackward)->Arg(64)->Arg(256);

void BM_InputGradient(benchmark::State& state) {
  EnergyModel model = make_model(2, 64, 4);
  Rng rng = make_rng(4, 0);
  const Tensor x = Tensor::randn({64, 2}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(input_gradient(model, x).values().data());
}
BENCHMARK(BM_InputGradient);

void BM_SgldChain(benchmark::State& state) {
  EnergyModel model = make_model(2, 64, 4);
  SgldConfig cfg = SgldConfig::low_dim();
  cfg.steps = static_cast<int>(state.range(0));
  Rng rng = make_rng(5, 0);
  const Tensor x0 = sample_box(64, 2, cfg.box, rng);
  for (auto _ : state) benchmark::DoNotOptimize(sgld_chain(model, x0, cfg, rng).values().data());
  state.SetItemsProcessed(state.iterations() * cfg.steps * 64);
}
BENCHMARK(BM_SgldChain)->Arg(10)->Arg(50);

void BM_Ece(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(6, 0);
  Tensor logits = Tensor::randn({n, 10}, rng, 2.0);
  std::vector<Label> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<Label>(i % 10);
  const PredictionSet p = PredictionSet::from_logits(std::move(logits), std::move(y));
  for (auto _ : state) benchmark::DoNotOptimize(ece(p, 15));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Ece)->Arg(1000)->Arg(10000);

void BM_FitTemperature(benchmark::State& state) {
  Rng rng = make_rng(7, 0);
  Tensor logits = Tensor::randn({2000, 4}, rng, 3.0);
  std::vector<Label> y(2000);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<Label>(i % 4);
  const PredictionSet p = PredictionSet::from_logits(std::move(logits), std::move(y));
  for (auto _ : state) benchmark::DoNotOptimize(fit_temperature(p));
}
BENCHMARK(BM_FitTemperature);

}  // namespace

BENCHMARK_MAIN();
