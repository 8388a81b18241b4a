#include "jemcal/cli/commands.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "jemcal/calibration.hpp"
#include "jemcal/numfmt.hpp"
#include "jemcal/reports.hpp"
#include "jemcal/sgld.hpp"
#include "jemcal/training.hpp"

namespace jemcal::cli {

namespace fs = std::filesystem;

namespace {

void note(std::ostream* log, const std::string& msg) {
  if (log) *log << msg << '\n';
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  return out;
}

template <class F>
void write_file(const fs::path& path, F&& write) {
  std::ofstream out = open_out(path);
  write(out);
  if (!out) throw InputError("failed writing '" + path.string() + "'");
}

void prepare_out(const CommandContext& ctx) {
  if (ctx.out.empty()) throw ConfigError("--out", "no output directory given");
  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec) throw InputError("cannot create '" + ctx.out.string() + "': " + ec.message());
  RunConfig resolved = ctx.config;
  resolved.out = ctx.out.generic_string();
  write_file(ctx.out / "config.yaml", [&](std::ostream& o) { o << to_yaml(resolved); });
}

ModelFile load_model_arg(const CommandContext& ctx) {
  if (!ctx.model) throw ConfigError("--model", "a model file is required");
  if (!fs::is_regular_file(*ctx.model)) throw ConfigError("--model", "no such file '" + ctx.model->string() + "'");
  return load_model(*ctx.model);
}

std::string comment_block(const RunConfig& config) {
  return "jemcal " + std::string("config_hash ") + config.hash() + "\n" + to_yaml(config);
}

void write_eval_outputs(const fs::path& dir, const Evaluation& e, std::size_t bins) {
  const std::vector<std::pair<std::string, double>> rows{
      {"accuracy", e.accuracy},
      {"ece", e.ece},
      {"nll", e.nll},
      {"nll_floored", static_cast<double>(e.nll_floored)},
      {"n", static_cast<double>(e.predictions.size())},
      {"bins", static_cast<double>(bins)},
      {"overconfident_errors", static_cast<double>(overconfident_errors(e.predictions))}};
  write_file(dir / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, rows); });
}

}  // namespace

Dataset build_dataset(const RunConfig& config) {
  config.validate();
  const DataConfig& d = config.data;
  Dataset data;
  switch (d.source) {
    case DataSource::gaussian_mixture:
      data = gen_gaussian_mixture(d.num_classes, d.dim, d.n_per_class, d.separation, d.seed);
      break;
    case DataSource::two_moons: data = gen_two_moons(d.n, d.noise, d.seed); break;
    case DataSource::spirals: data = gen_spirals(d.n, d.turns, d.noise, d.seed); break;
    case DataSource::csv:
      if (!fs::is_regular_file(d.path)) throw ConfigError("data.path", "no such file '" + d.path + "'");
      data = ingest_csv(d.path, d.label_column, d.num_classes);
      break;
  }
  return split(std::move(data), d.split, d.seed);
}

Dataset training_data(const RunConfig& config, std::ostream* log) {
  Dataset data = build_dataset(config);
  if (config.data.standardize) {
    data = standardize(std::move(data));
    const auto& n = *data.normalization;
    if (n.dim() < n.raw_dim) {
      note(log, "warning: dropped " + std::to_string(n.raw_dim - n.dim()) + " constant feature(s)");
    }
  }
  if (const std::size_t moved = clip_to_box(data, config.train.sgld.box)) {
    note(log, "clipped " + std::to_string(moved) + " feature value(s) into the box");
  }
  return data;
}

Dataset evaluation_data(const RunConfig& config, const ModelFile& model, std::ostream* log) {
  Dataset data = build_dataset(config);
  if (model.normalization) {
    if (data.dim() != model.normalization->raw_dim) {
      throw DimensionError("model expects D=" + std::to_string(model.normalization->raw_dim) +
                           " raw features, found D=" + std::to_string(data.dim()));
    }
    data.features = model.normalization->apply(data.features);
    data.normalization = model.normalization;
  }
  if (data.dim() != model.model.input_dim()) {
    throw DimensionError("model expects D=" + std::to_string(model.model.input_dim()) + " features, found D=" +
                         std::to_string(data.dim()));
  }
  if (data.num_classes != model.model.num_classes()) {
    throw DimensionError("model expects K=" + std::to_string(model.model.num_classes()) + " classes, found K=" +
                         std::to_string(data.num_classes));
  }
  if (const std::size_t moved = clip_to_box(data, config.train.sgld.box)) {
    note(log, "clipped " + std::to_string(moved) + " feature value(s) into the box");
  }
  return data;
}

void cmd_train(const CommandContext& ctx) {
  Dataset data = training_data(ctx.config, ctx.log);
  prepare_out(ctx);
  ModelSpec spec = ctx.config.model;
  spec.input_dim = data.dim();
  spec.num_classes = data.num_classes;
  note(ctx.log, "training " + to_string(ctx.config.train.mode) + " model on " +
                    std::to_string(data.splits.train.size()) + " rows");
  TrainResult result = train(data, spec, ctx.config.train);
  RunConfig resolved = ctx.config;
  resolved.out = ctx.out.generic_string();
  write_file(ctx.out / "trainlog.csv", [&](std::ostream& o) { result.log.write_csv(o, comment_block(resolved)); });
  save_model(ctx.out / "model.txt", ModelFile{std::move(result.model), to_string(ctx.config.train.mode),
                                              resolved.hash(), data.normalization, std::move(result.buffer)});
}

void cmd_eval(const CommandContext& ctx) {
  const ModelFile mf = load_model_arg(ctx);
  const Dataset data = evaluation_data(ctx.config, mf, ctx.log);
  prepare_out(ctx);
  const std::size_t bins = ctx.config.train.bins;
  const Evaluation e = evaluate(mf.model, data, ctx.split, bins);
  write_eval_outputs(ctx.out, e, bins);
  const PredictionSet& p = e.predictions;
  write_file(ctx.out / "predictions.csv", [&](std::ostream& o) { write_predictions_csv(o, p); });
  write_file(ctx.out / "reliability.csv",
             [&](std::ostream& o) { write_reliability_csv(o, reliability_report(p, bins), e.nll, e.accuracy); });
  write_file(ctx.out / "histogram.csv", [&](std::ostream& o) { write_histogram_csv(o, confidence_histogram(p, bins)); });
  write_file(ctx.out / "reliability_b10.csv",
             [&](std::ostream& o) { write_reliability_csv(o, reliability_report(p, 10), e.nll, e.accuracy); });
}

namespace {

struct SplitMetrics {
  double accuracy, nll, ece;
};

SplitMetrics metrics_of(const PredictionSet& p, std::size_t bins) { return {accuracy(p), nll(p), ece(p, bins)}; }

void check_method(const std::string& method) {
  if (method != "temperature" && method != "logistic-vector" && method != "logistic-matrix" &&
      method != "logistic-tied") {
    throw ConfigError("--method", "unknown method '" + method +
                                      "' (expected temperature, logistic-vector, logistic-matrix or logistic-tied)");
  }
}

Calibrator fit_method(const std::string& method, const PredictionSet& dev) {
  if (method == "temperature") return TemperatureCalibrator{fit_temperature(dev)};
  if (method == "logistic-vector") return fit_logistic_scaling(dev, LogisticVariant::vector);
  if (method == "logistic-matrix") return fit_logistic_scaling(dev, LogisticVariant::matrix);
  check_method(method);
  return fit_logistic_scaling(dev, LogisticVariant::tied);
}

}  // namespace

void cmd_calibrate(const CommandContext& ctx) {
  const ModelFile mf = load_model_arg(ctx);
  const Dataset data = evaluation_data(ctx.config, mf, ctx.log);
  if (data.splits.dev.empty()) throw ConfigError("data.split.dev", "the dev split is empty");
  check_method(ctx.method);
  prepare_out(ctx);
  const std::size_t bins = ctx.config.train.bins;
  const Evaluation dev = evaluate(mf.model, data, Split::dev, bins);
  const Evaluation test = evaluate(mf.model, data, Split::test, bins);
  const Calibrator cal = fit_method(ctx.method, dev.predictions);
  const PredictionSet dev_after = apply_calibrator(dev.predictions, cal);
  const PredictionSet test_after = apply_calibrator(test.predictions, cal);

  std::vector<std::pair<std::string, double>> rows;
  const auto add = [&](const std::string& prefix, const SplitMetrics& m) {
    rows.emplace_back(prefix + "_accuracy", m.accuracy);
    rows.emplace_back(prefix + "_nll", m.nll);
    rows.emplace_back(prefix + "_ece", m.ece);
  };
  add("dev_before", metrics_of(dev.predictions, bins));
  add("dev_after", metrics_of(dev_after, bins));
  add("test_before", metrics_of(test.predictions, bins));
  add("test_after", metrics_of(test_after, bins));
  if (const auto* t = std::get_if<TemperatureCalibrator>(&cal)) rows.emplace_back("temperature", t->temperature);
  write_file(ctx.out / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, rows); });
  save_calibrator(ctx.out / "calibrator.txt", cal);
  write_file(ctx.out / "reliability_after.csv", [&](std::ostream& o) {
    write_reliability_csv(o, reliability_report(test_after, bins), nll(test_after), accuracy(test_after));
  });
}

void cmd_sample(const CommandContext& ctx) {
  const ModelFile mf = load_model_arg(ctx);
  if (ctx.n == 0) throw ConfigError("--n", "must be positive");
  if (mf.mode != "jem") {
    note(ctx.log, "warning: sampling from a " + mf.mode + " model; its marginal energy was never trained");
  }
  prepare_out(ctx);
  const EnergyModel& model = mf.model;
  SgldConfig cfg = ctx.config.train.sgld;
  cfg.validate();
  Rng rng = make_rng(ctx.config.train.seed, streams::kSgld);
  const Tensor start = sample_box(ctx.n, model.input_dim(), cfg.box, rng);
  constexpr int kRetries = 3;
  std::optional<Tensor> samples;
  for (int attempt = 0; attempt <= kRetries && !samples; ++attempt) {
    try {
      samples = sgld_chain(model, start, cfg, rng);
    } catch (const SgldDivergence& e) {
      if (attempt == kRetries) throw;
      note(ctx.log, std::string("sgld diverged (") + e.what() + "); retrying with half the step size");
      cfg.step_size *= 0.5;
    }
  }
  const std::vector<double> energy = free_energy(model, *samples);
  const std::vector<double> prior_energy = free_energy(model, start);
  write_file(ctx.out / "samples.csv", [&](std::ostream& out) {
    for (std::size_t j = 0; j < model.input_dim(); ++j) out << 'x' << j << ',';
    out << "free_energy\n";
    for (std::size_t i = 0; i < ctx.n; ++i) {
      for (double v : samples->row(i)) out << format_double(v) << ',';
      out << format_double(energy[i]) << '\n';
    }
  });
  double mean_s = 0.0, mean_p = 0.0;
  for (std::size_t i = 0; i < ctx.n; ++i) {
    mean_s += energy[i];
    mean_p += prior_energy[i];
  }
  const double n = static_cast<double>(ctx.n);
  const std::vector<std::pair<std::string, double>> rows{{"n", n},
                                                         {"mean_free_energy_samples", mean_s / n},
                                                         {"mean_free_energy_prior", mean_p / n},
                                                         {"step_size", cfg.step_size}};
  write_file(ctx.out / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, rows); });
}

void cmd_report(const CommandContext& ctx) {
  if (!ctx.predictions) throw ConfigError("--predictions", "a prediction log is required");
  std::ifstream in(*ctx.predictions);
  if (!in) throw ConfigError("--predictions", "cannot open '" + ctx.predictions->string() + "'");
  const PredictionSet preds = read_predictions_csv(in);
  prepare_out(ctx);
  const std::size_t bins = ctx.config.train.bins;
  write_file(ctx.out / "reliability.csv", [&](std::ostream& o) {
    write_reliability_csv(o, reliability_report(preds, bins), nll(preds), accuracy(preds));
  });
  write_file(ctx.out / "histogram.csv",
             [&](std::ostream& o) { write_histogram_csv(o, confidence_histogram(preds, bins)); });
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const ContractError*>(&e)) {
    return 2;
  }
  return 1;
}

}  // namespace jemcal::cli
