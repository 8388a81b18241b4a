#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "jemcal/cli/commands.hpp"

namespace {

using namespace jemcal;
using namespace jemcal::cli;

struct Flags {
  std::string config, out, mode, data, split = "test", method = "temperature", model, predictions;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> bins, n;
  std::optional<int> epochs, steps;
  std::optional<double> step_size, noise_scale;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "Run config (YAML)");
  cmd->add_option("--seed", f.seed, "Override the run seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--bins", f.bins, "Confidence bins for ECE and diagrams")->check(CLI::PositiveNumber);
}

void add_data(CLI::App* cmd, Flags& f) {
  cmd->add_option("--data", f.data, "Feature CSV (label in the last column); overrides data.source");
}

void add_model(CLI::App* cmd, Flags& f) {
  cmd->add_option("--model", f.model, "Model file written by 'train'")->required();
}

void add_sgld(CLI::App* cmd, Flags& f) {
  cmd->add_option("--steps", f.steps, "SGLD steps")->check(CLI::PositiveNumber);
  cmd->add_option("--step-size", f.step_size, "SGLD step size")->check(CLI::PositiveNumber);
  cmd->add_option("--noise-scale", f.noise_scale, "SGLD noise scale (decoupled noise)")->check(CLI::PositiveNumber);
}

CommandContext resolve(const std::string& command, const Flags& f) {
  CommandContext ctx;
  if (!f.config.empty()) ctx.config = load_run_config(f.config);
  RunConfig& c = ctx.config;
  if (f.seed) c.train.seed = *f.seed;
  if (f.bins) c.train.bins = *f.bins;
  if (!f.mode.empty()) c.train.mode = train_mode_from_string(f.mode);
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.steps) c.train.sgld.steps = *f.steps;
  if (f.step_size) c.train.sgld.step_size = *f.step_size;
  if (f.noise_scale) c.train.sgld.noise_scale = *f.noise_scale;
  if (!f.data.empty()) {
    c.data.source = DataSource::csv;
    c.data.path = f.data;
  }
  if (!f.out.empty()) {
    ctx.out = f.out;
  } else if (!c.out.empty()) {
    ctx.out = c.out;
  } else if (const char* root = std::getenv("JEMCAL_OUT"); root && *root) {
    ctx.out = std::filesystem::path(root) / command;
  } else {
    ctx.out = std::filesystem::path("jemcal-runs") / command;
  }
  c.validate();
  if (!f.model.empty()) ctx.model = f.model;
  if (!f.predictions.empty()) ctx.predictions = f.predictions;
  try {
    ctx.split = split_from_string(f.split);
  } catch (const Error& e) {
    throw ConfigError("--split", e.what());
  }
  ctx.method = f.method;
  if (f.n) ctx.n = *f.n;
  ctx.log = &std::cerr;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint energy-based training and calibration toolkit"};
  app.require_subcommand(1);
  Flags f;

  auto* train = app.add_subcommand("train", "Train a softmax or JEM classifier");
  add_common(train, f);
  add_data(train, f);
  add_sgld(train, f);
  train->add_option("--mode", f.mode, "softmax or jem")->check(CLI::IsMember({"softmax", "jem"}));
  train->add_option("--epochs", f.epochs, "Override train.epochs")->check(CLI::NonNegativeNumber);

  auto* eval = app.add_subcommand("eval", "Evaluate a model and write metrics and diagram data");
  add_common(eval, f);
  add_data(eval, f);
  add_model(eval, f);
  eval->add_option("--split", f.split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));

  auto* calibrate = app.add_subcommand("calibrate", "Fit a post-hoc calibrator on the dev split");
  add_common(calibrate, f);
  add_data(calibrate, f);
  add_model(calibrate, f);
  calibrate->add_option("--method", f.method, "temperature, logistic-vector, logistic-matrix or logistic-tied")
      ->check(CLI::IsMember({"temperature", "logistic-vector", "logistic-matrix", "logistic-tied"}));

  auto* sample = app.add_subcommand("sample", "Draw SGLD samples from a model's marginal energy");
  add_common(sample, f);
  add_model(sample, f);
  add_sgld(sample, f);
  sample->add_option("--n", f.n, "Number of samples")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Reliability and histogram data from a prediction log");
  add_common(report, f);
  report->add_option("--predictions", f.predictions, "predictions.csv as written by 'eval'")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    const CommandContext ctx = resolve(name, f);
    if (name == "train") cmd_train(ctx);
    else if (name == "eval") cmd_eval(ctx);
    else if (name == "calibrate") cmd_calibrate(ctx);
    else if (name == "sample") cmd_sample(ctx);
    else cmd_report(ctx);
  } catch (const std::exception& e) {
    std::cerr << "jemcal: error: " << e.what() << '\n';
    return exit_code(e);
  }
  return 0;
}
