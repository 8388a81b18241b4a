#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "jemcal/cli/commands.hpp"
#include "jemcal/cli/run_config.hpp"
#include "jemcal/model_io.hpp"
#include "jemcal/numfmt.hpp"
#include "oracles.hpp"

using namespace jemcal;
using namespace jemcal::cli;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> cells(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string c; std::getline(in, c, ',');) out.push_back(c);
  return out;
}

std::map<std::string, double> metrics(const fs::path& p) {
  std::map<std::string, double> m;
  const auto lines = lines_of(slurp(p));
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto c = cells(lines[i]);
    m[c.at(0)] = std::stod(c.at(1));
  }
  return m;
}

struct Outcome {
  int code;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("jemcal_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir_);
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  Outcome run(const std::string& args) const {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string("\"") + JEMCAL_CLI_PATH + "\" " + args + " 2> \"" + err.string() + "\" > /dev/null";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
  }

  // Small 2-class mixture run; trains in well under a second.
  fs::path small_config(const std::string& mode, int epochs = 3) const {
    const fs::path p = dir_ / ("config_" + mode + ".yaml");
    spit(p, "seed: 3\n"
            "bins: 10\n"
            "data: {source: gaussian_mixture, num_classes: 2, dim: 2, n_per_class: 120, separation: 2.0,\n"
            "       split: {train: 0.5, dev: 0.25, test: 0.25}, seed: 11}\n"
            "model: {hidden: [16]}\n"
            "train:\n"
            "  mode: " + mode + "\n"
            "  epochs: " + std::to_string(epochs) + "\n"
            "  batch_size: 32\n"
            "  lr: {base: 0.05, warmup_steps: 5, decay_epochs: [20], decay_factor: 0.2}\n"
            "  buffer_capacity: 200\n"
            "sgld: {steps: 10, step_size: 0.3, noise_scale: 0.01, decouple_noise: true}\n");
    return p;
  }

  fs::path train(const std::string& mode, const std::string& out, int epochs = 3) const {
    const Outcome r = run("train --config \"" + small_config(mode, epochs).string() + "\" --out \"" + path(out).string() + "\"");
    EXPECT_EQ(r.code, 0) << r.err;
    return path(out);
  }

  fs::path dir_;
};

}  // namespace

TEST(RunConfigText, DefaultRoundTrips) {
  const RunConfig c;
  EXPECT_EQ(parse_run_config(to_yaml(c)), c);
}

TEST(RunConfigText, VariedFieldsRoundTrip) {
  RunConfig c;
  c.out = "runs/x";
  c.data.source = DataSource::spirals;
  c.data.n = 321;
  c.data.noise = 0.07;
  c.data.turns = 2.25;
  c.data.split = {0.6, 0.15, 0.25};
  c.data.seed = 99;
  c.data.standardize = false;
  c.model.hidden = {8, 4, 3};
  c.model.activation = Activation::tanh;
  c.model.temperature = 1.0 / 3.0;
  c.train.mode = TrainMode::jem;
  c.train.epochs = 7;
  c.train.lr.decay_epochs = {1, 5};
  c.train.lr.base = 0.0123456789;
  c.train.sgld.clip_grad.reset();
  c.train.sgld.box = {-2.5, 4.0};
  c.train.seed = 12345678901234ull;
  c.train.bins = 7;
  const RunConfig back = parse_run_config(to_yaml(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.hash(), c.hash());
  c.train.bins = 8;
  EXPECT_NE(back.hash(), c.hash());
}

TEST(RunConfigText, ShippedConfigLoads) {
  const RunConfig c = load_run_config(fs::path(JEMCAL_CONFIG_DIR) / "mixture4.yaml");
  EXPECT_EQ(c.data.num_classes, 4u);
  EXPECT_EQ(c.train.epochs, 100);
  EXPECT_EQ(c.train.sgld.steps, 50);
}

TEST(RunConfigText, UnknownKeyNamesFieldAndLine) {
  try {
    parse_run_config("seed: 1\ntrain:\n  epochs: 3\n  epoch_count: 4\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "train.epoch_count");
    EXPECT_EQ(e.line(), 4);
  }
  try {
    parse_run_config("data:\n  separation: wide\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "data.separation");
    EXPECT_EQ(e.line(), 2);
  }
}

TEST_F(Cli, TrainLogsShareTheSchema) {
  const fs::path soft = train("softmax", "soft");
  const fs::path jem = train("jem", "jem");
  for (const fs::path& d : {soft, jem}) {
    EXPECT_TRUE(fs::is_regular_file(d / "model.txt"));
    EXPECT_TRUE(fs::is_regular_file(d / "config.yaml"));
  }
  const auto header = [](const fs::path& p) {
    for (const auto& line : lines_of(slurp(p))) {
      if (line.rfind("#", 0) != 0) return line;
    }
    return std::string();
  };
  const std::string h = header(soft / "trainlog.csv");
  EXPECT_EQ(h, "epoch,ce_loss,gen_loss,test_acc,test_nll,test_ece,sgld_divergences");
  EXPECT_EQ(header(jem / "trainlog.csv"), h);
  EXPECT_EQ(load_model(jem / "model.txt").mode, "jem");
  EXPECT_TRUE(load_model(jem / "model.txt").buffer.has_value());
  EXPECT_FALSE(load_model(soft / "model.txt").buffer.has_value());
}

TEST_F(Cli, ResolvedConfigReloadsToTheSameRun) {
  const fs::path out = train("softmax", "soft");
  RunConfig written = load_run_config(out / "config.yaml");
  RunConfig original = load_run_config(small_config("softmax"));
  EXPECT_EQ(written.out, out.generic_string());
  written.out.clear();
  EXPECT_EQ(written, original);
}

TEST_F(Cli, MissingDatasetPathIsAUsageError) {
  spit(path("c.yaml"), "data: {source: csv, num_classes: 2}\n");
  Outcome r = run("train --config \"" + path("c.yaml").string() + "\" --out \"" + path("o").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("data.path"), std::string::npos) << r.err;
  spit(path("c.yaml"), "data: {source: csv, num_classes: 2, path: " + path("nope.csv").string() + "}\n");
  r = run("train --config \"" + path("c.yaml").string() + "\" --out \"" + path("o").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("data.path"), std::string::npos) << r.err;
}

TEST_F(Cli, ConfigErrorsReportTheLine) {
  spit(path("c.yaml"), "seed: 1\nmodel:\n  hidden: [4]\n  width: 3\n");
  const Outcome r = run("train --config \"" + path("c.yaml").string() + "\" --out \"" + path("o").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 4"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("model.width"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownFlagIsAUsageError) {
  EXPECT_EQ(run("train --frobnicate").code, 2);
  EXPECT_EQ(run("").code, 2);
}

TEST_F(Cli, RerunGivesAByteIdenticalTrainLog) {
  for (const std::string mode : {"softmax", "jem"}) {
    const fs::path out = train(mode, "run");
    const std::string first = slurp(out / "trainlog.csv");
    const std::string model = slurp(out / "model.txt");
    fs::remove_all(out);
    train(mode, "run");
    EXPECT_EQ(slurp(out / "trainlog.csv"), first) << mode;
    EXPECT_EQ(slurp(out / "model.txt"), model) << mode;
  }
}

TEST_F(Cli, PerfectModelScoresPerfectly) {
  std::string csv = "x0,label\n";
  for (int i = 0; i < 20; ++i) csv += (i % 2 ? "1,1\n" : "-1,0\n");
  spit(path("toy.csv"), csv);
  spit(path("toy.yaml"), "data: {source: csv, path: " + path("toy.csv").string() +
                             ", num_classes: 2, standardize: false, split: {train: 0.5, dev: 0.25, test: 0.25}}\n");
  ModelSpec spec;
  spec.input_dim = 1;
  spec.num_classes = 2;
  spec.hidden = {};
  std::vector<Layer> layers;
  layers.push_back({Tensor::matrix(1, 2, {-50.0, 50.0}), Tensor::vector({0.0, 0.0})});
  save_model(path("toy.txt"), ModelFile{EnergyModel(spec, std::move(layers)), "softmax", "", std::nullopt, std::nullopt});
  const Outcome r = run("eval --config \"" + path("toy.yaml").string() + "\" --model \"" + path("toy.txt").string() +
                    "\" --out \"" + path("eval").string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = metrics(path("eval") / "metrics.csv");
  EXPECT_EQ(m.at("accuracy"), 1.0);
  EXPECT_EQ(m.at("ece"), 0.0);
  EXPECT_NEAR(m.at("nll"), 0.0, 1e-12);
  EXPECT_EQ(m.at("overconfident_errors"), 0.0);
}

TEST_F(Cli, EvalMetricsMatchAnIndependentRecomputation) {
  const fs::path model = train("softmax", "soft") / "model.txt";
  const fs::path out = path("eval");
  const Outcome r = run("eval --config \"" + small_config("softmax").string() + "\" --model \"" + model.string() +
                    "\" --out \"" + out.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = metrics(out / "metrics.csv");

  const auto lines = lines_of(slurp(out / "predictions.csv"));
  const auto head = cells(lines.at(0));
  std::vector<std::size_t> prob_cols, logit_cols;
  for (std::size_t j = 0; j < head.size(); ++j) {
    if (head[j].rfind("prob_", 0) == 0) prob_cols.push_back(j);
    if (head[j].rfind("logit_", 0) == 0) logit_cols.push_back(j);
  }
  ASSERT_EQ(prob_cols.size(), 2u);
  std::vector<std::vector<double>> probs;
  std::vector<int> labels;
  double nll = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto c = cells(lines[i]);
    labels.push_back(std::stoi(c.at(0)));
    std::vector<double> p;
    for (std::size_t j : prob_cols) p.push_back(std::stod(c.at(j)));
    std::size_t arg = 0;
    for (std::size_t k = 1; k < p.size(); ++k) {
      if (p[k] > p[arg]) arg = k;
    }
    correct += static_cast<int>(arg) == labels.back();
    if (!logit_cols.empty()) {
      std::vector<double> z;
      for (std::size_t j : logit_cols) z.push_back(std::stod(c.at(j)));
      nll += static_cast<double>(oracle::lse_direct(z)) - z[static_cast<std::size_t>(labels.back())];
    } else {
      nll -= std::log(p[static_cast<std::size_t>(labels.back())]);
    }
    probs.push_back(std::move(p));
  }
  const double n = static_cast<double>(labels.size());
  EXPECT_EQ(m.at("n"), n);
  EXPECT_NEAR(m.at("accuracy"), static_cast<double>(correct) / n, 1e-9);
  EXPECT_NEAR(m.at("nll"), nll / n, 1e-9);
  EXPECT_NEAR(m.at("ece"), oracle::ece_brute(probs, labels, 10), 1e-9);
}

TEST_F(Cli, BinsFlagSetsReliabilityRows) {
  const fs::path model = train("softmax", "soft") / "model.txt";
  const Outcome r = run("eval --config \"" + small_config("softmax").string() + "\" --model \"" + model.string() +
                    "\" --bins 7 --out \"" + path("eval").string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t bin_rows = 0;
  for (const auto& line : lines_of(slurp(path("eval") / "reliability.csv"))) {
    const auto c = cells(line);
    if (!c.empty() && parse_double(c[0])) ++bin_rows;
  }
  EXPECT_EQ(bin_rows, 7u);
  EXPECT_EQ(lines_of(slurp(path("eval") / "histogram.csv")).size(), 8u);
}

TEST_F(Cli, DimensionMismatchNamesD) {
  const fs::path model = train("softmax", "soft") / "model.txt";
  spit(path("c3.yaml"), "data: {source: gaussian_mixture, num_classes: 2, dim: 3, n_per_class: 20}\n");
  const Outcome r = run("eval --config \"" + path("c3.yaml").string() + "\" --model \"" + model.string() + "\" --out \"" +
                    path("eval").string() + "\"");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("D=2"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("D=3"), std::string::npos) << r.err;
}

TEST_F(Cli, CalibrateKeepsItsContracts) {
  const fs::path model = train("softmax", "soft", 15) / "model.txt";
  const auto calibrate = [&](const std::string& method) {
    const fs::path out = path(method);
    const Outcome r = run("calibrate --config \"" + small_config("softmax").string() + "\" --model \"" + model.string() +
                      "\" --method " + method + " --out \"" + out.string() + "\"");
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::is_regular_file(out / "calibrator.txt"));
    return metrics(out / "metrics.csv");
  };
  const auto t = calibrate("temperature");
  EXPECT_LE(t.at("dev_after_nll"), t.at("dev_before_nll") + 1e-9);
  EXPECT_EQ(t.at("dev_after_accuracy"), t.at("dev_before_accuracy"));
  EXPECT_EQ(t.at("test_after_accuracy"), t.at("test_before_accuracy"));
  EXPECT_GT(t.at("temperature"), 0.0);
  const auto v = calibrate("logistic-vector");
  const auto mtx = calibrate("logistic-matrix");
  EXPECT_LE(mtx.at("dev_after_nll"), v.at("dev_after_nll") + 1e-6);
  EXPECT_LE(v.at("dev_after_nll"), v.at("dev_before_nll") + 1e-9);
  const Outcome bad = run("calibrate --config \"" + small_config("softmax").string() + "\" --model \"" + model.string() +
                      "\" --method platt --out \"" + path("x").string() + "\"");
  EXPECT_EQ(bad.code, 2);
}

TEST_F(Cli, SamplesAreBoxedLowEnergyAndSeeded) {
  const fs::path model = train("jem", "jem", 10) / "model.txt";
  const auto sample = [&](const std::string& out, int seed) {
    const Outcome r = run("sample --model \"" + model.string() + "\" --n 200 --seed " + std::to_string(seed) +
                      " --out \"" + path(out).string() + "\"");
    EXPECT_EQ(r.code, 0) << r.err;
    return slurp(path(out) / "samples.csv");
  };
  const std::string a = sample("a", 5);
  const auto lines = lines_of(a);
  ASSERT_EQ(lines.size(), 201u);
  EXPECT_EQ(lines[0], "x0,x1,free_energy");
  const DataBox box;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto c = cells(lines[i]);
    for (std::size_t j = 0; j < 2; ++j) {
      const double v = std::stod(c.at(j));
      EXPECT_TRUE(v >= box.low && v <= box.high) << v;
    }
  }
  const auto m = metrics(path("a") / "metrics.csv");
  EXPECT_LE(m.at("mean_free_energy_samples"), m.at("mean_free_energy_prior"));
  const std::string b = sample("b", 5);
  EXPECT_EQ(a, b);
  EXPECT_NE(sample("c", 6), a);
}

TEST_F(Cli, ReportReproducesEvalReliabilityBitExactly) {
  const fs::path model = train("jem", "jem") / "model.txt";
  const Outcome e = run("eval --config \"" + small_config("jem").string() + "\" --model \"" + model.string() +
                    "\" --out \"" + path("eval").string() + "\"");
  ASSERT_EQ(e.code, 0) << e.err;
  const Outcome r = run("report --predictions \"" + (path("eval") / "predictions.csv").string() +
                    "\" --bins 10 --out \"" + path("report").string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("report") / "reliability.csv"), slurp(path("eval") / "reliability.csv"));
  EXPECT_EQ(slurp(path("report") / "histogram.csv"), slurp(path("eval") / "histogram.csv"));
}

TEST_F(Cli, ReportRejectsMalformedLogs) {
  spit(path("empty.csv"), "");
  Outcome r = run("report --predictions \"" + path("empty.csv").string() + "\" --out \"" + path("o").string() + "\"");
  EXPECT_EQ(r.code, 2);
  spit(path("bad.csv"), "label,prob_0,prob_1\n0,0.5,0.5\n1,0.3,0.6\n");
  r = run("report --predictions \"" + path("bad.csv").string() + "\" --out \"" + path("o").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find('3'), std::string::npos) << r.err;
  r = run("report --predictions \"" + path("missing.csv").string() + "\" --out \"" + path("o").string() + "\"");
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, EveryCommandIsDeterministic) {
  const std::string cfg = small_config("jem").string();
  const auto all_outputs = [&](const std::string& root) {
    std::map<std::string, std::string> files;
    const fs::path base = path(root);
    const std::string model = (base / "train" / "model.txt").string();
    const std::vector<std::pair<std::string, std::string>> cmds{
        {"train", "train --config \"" + cfg + "\""},
        {"eval", "eval --config \"" + cfg + "\" --model \"" + model + "\""},
        {"calibrate", "calibrate --config \"" + cfg + "\" --model \"" + model + "\" --method logistic-matrix"},
        {"sample", "sample --config \"" + cfg + "\" --model \"" + model + "\" --n 50"},
        {"report", "report --predictions \"" + (base / "eval" / "predictions.csv").string() + "\""}};
    for (const auto& [name, args] : cmds) {
      const Outcome r = run(args + " --out \"" + (base / name).string() + "\"");
      EXPECT_EQ(r.code, 0) << name << ": " << r.err;
    }
    for (const auto& entry : fs::recursive_directory_iterator(base)) {
      if (entry.is_regular_file()) files[fs::relative(entry.path(), base).generic_string()] = slurp(entry.path());
    }
    return files;
  };
  // Outputs embed their own directory, so the second run reuses the same root.
  const auto first = all_outputs("r");
  fs::remove_all(path("r"));
  const auto second = all_outputs("r");
  ASSERT_EQ(first.size(), second.size());
  EXPECT_GE(first.size(), 15u);
  for (const auto& [name, text] : first) {
    ASSERT_TRUE(second.count(name)) << name;
    EXPECT_EQ(second.at(name), text) << name;
  }
}
