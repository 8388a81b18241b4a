#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jemcal/box.hpp"
#include "jemcal/tensor.hpp"

namespace jemcal {

enum class Split { train, dev, test, all };

std::string to_string(Split s);
Split split_from_string(const std::string& name);

struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
  std::vector<std::size_t> test;
};

/// Per-feature affine standardisation fitted on a training split.
/// Features whose training std is ~0 are dropped; `kept` lists the surviving
/// raw column indices in order.
struct Normalization {
  std::size_t raw_dim = 0;
  std::vector<std::size_t> kept;
  std::vector<double> mean;    // per kept feature
  std::vector<double> stddev;  // per kept feature

  std::size_t dim() const noexcept { return kept.size(); }
  /// Map raw [n x raw_dim] features into standardized [n x dim()] space.
  Tensor apply(const Tensor& raw) const;
};

struct Dataset {
  Tensor features;  // [n x D]
  std::vector<Label> labels;
  std::size_t num_classes = 0;
  Splits splits;
  std::optional<Normalization> normalization;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  std::vector<std::size_t> indices(Split s) const;
  Tensor features_of(Split s) const;
  std::vector<Label> labels_of(Split s) const;

  /// Checks shapes, label range and that splits are disjoint and covering.
  void validate() const;
};

/// Rows `idx` of an [n x D] matrix.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx);

/// K unit-covariance Gaussians with equal priors.
///
/// For K <= D+1 the means form a regular simplex with all pairwise distances
/// equal to `separation`. Otherwise they sit on a regular K-gon with adjacent
/// distance `separation`, placed in a seeded random 2-plane (D >= 2) or on a
/// line with that spacing (D == 1).
struct GaussianMixture {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  double separation = 0.0;
  std::vector<std::vector<double>> means;

  /// Closed-form Bayes log p(y|x), [n x K].
  Tensor log_posterior(const Tensor& x) const;
  Tensor posterior(const Tensor& x) const;
};

GaussianMixture make_gaussian_mixture(std::size_t num_classes, std::size_t dim, double separation, std::uint64_t seed);

/// Samples `n_per_class` points per component. All rows start in the train split.
Dataset gen_gaussian_mixture(std::size_t num_classes, std::size_t dim, std::size_t n_per_class, double separation,
                             std::uint64_t seed);
Dataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed);
Dataset gen_spirals(std::size_t n, double turns, double noise, std::uint64_t seed);

/// Parse a rectangular numeric CSV. `label_column` may be negative (from the
/// end). A first row with any non-numeric cell is treated as a header.
Dataset ingest_csv(const std::filesystem::path& path, int label_column, std::size_t num_classes);
Dataset parse_csv(std::istream& in, int label_column, std::size_t num_classes);
/// Writes `x0..x{D-1},label`; ingest_csv(path, -1, K) reproduces the data exactly.
void export_csv(const Dataset& data, const std::filesystem::path& path);
void write_csv(const Dataset& data, std::ostream& out);

struct SplitFractions {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;

  bool operator==(const SplitFractions&) const = default;
};

/// Stratified seeded partition. Every class in [0, K) must be present.
Dataset split(Dataset data, SplitFractions fractions, std::uint64_t seed);

/// Standardize with train-split statistics; drops constant features.
Dataset standardize(Dataset data);

/// Clamp every feature into the box; returns how many values were moved.
std::size_t clip_to_box(Dataset& data, DataBox box);

}  // namespace jemcal
