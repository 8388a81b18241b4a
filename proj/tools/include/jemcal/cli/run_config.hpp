#pragma once

// Declarative description of a jemcal run, read from and written to YAML.
//
// Unknown keys are rejected; errors carry the dotted field path and the
// 1-based line of the offending node. to_yaml() emits every field, and
// parse_run_config(to_yaml(c)) == c for any valid config.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jemcal/data.hpp"
#include "jemcal/error.hpp"
#include "jemcal/model.hpp"
#include "jemcal/training.hpp"

namespace jemcal::cli {

class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what, int line = 0);
  const std::string& field() const noexcept { return field_; }
  int line() const noexcept { return line_; }

 private:
  std::string field_;
  int line_;
};

enum class DataSource { gaussian_mixture, two_moons, spirals, csv };

std::string to_string(DataSource s);

struct DataConfig {
  DataSource source = DataSource::gaussian_mixture;
  std::size_t num_classes = 4;
  std::size_t dim = 2;
  std::size_t n_per_class = 1000;
  double separation = 2.5;
  std::size_t n = 1000;  // two_moons, spirals
  double noise = 0.1;
  double turns = 1.5;
  std::string path;      // csv
  int label_column = -1;
  SplitFractions split{};
  std::uint64_t seed = 0;
  bool standardize = true;

  bool operator==(const DataConfig&) const = default;
};

/// Top-level `seed` and `bins` live in train.seed and train.bins; `sgld`
/// is train.sgld. model.input_dim and model.num_classes are not part of the
/// text form; they are taken from the dataset when it is built.
struct RunConfig {
  std::string out;
  DataConfig data{};
  ModelSpec model{};
  TrainConfig train{};

  /// Field-level checks beyond the library's own (e.g. csv needs a path).
  void validate() const;
  /// FNV-1a of to_yaml().
  std::string hash() const;

  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_yaml(const RunConfig& config);

}  // namespace jemcal::cli
