#include "jemcal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "jemcal/error.hpp"
#include "jemcal/numfmt.hpp"
#include "jemcal/random.hpp"

namespace jemcal {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
    case Split::all: return "all";
  }
  return "unknown";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "dev") return Split::dev;
  if (name == "test") return Split::test;
  if (name == "all") return Split::all;
  throw ContractError("unknown split '" + name + "' (expected train, dev, test or all)");
}

Tensor Normalization::apply(const Tensor& raw) const {
  if (raw.rank() != 2 || raw.cols() != raw_dim) {
    throw DimensionError("normalization expects D=" + std::to_string(raw_dim) + " raw features, found " +
                         shape_string(raw.shape()));
  }
  Tensor out(Shape{raw.rows(), kept.size()});
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    for (std::size_t j = 0; j < kept.size(); ++j) out.at(i, j) = (raw.at(i, kept[j]) - mean[j]) / stddev[j];
  }
  return out;
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  switch (s) {
    case Split::train: return splits.train;
    case Split::dev: return splits.dev;
    case Split::test: return splits.test;
    case Split::all: break;
  }
  std::vector<std::size_t> all(size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  const std::size_t d = x.cols();
  Tensor out(Shape{idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = x.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Tensor Dataset::features_of(Split s) const {
  const auto idx = indices(s);
  return gather_rows(features, idx);
}

std::vector<Label> Dataset::labels_of(Split s) const {
  std::vector<Label> out;
  for (std::size_t i : indices(s)) out.push_back(labels[i]);
  return out;
}

void Dataset::validate() const {
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw DimensionError("dataset has " + std::to_string(labels.size()) + " labels for features " +
                         shape_string(features.shape()));
  }
  for (Label y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw IndexError("label " + std::to_string(y) + " out of range [0, " + std::to_string(num_classes) + ")");
    }
  }
  std::vector<int> seen(size(), 0);
  for (const auto* part : {&splits.train, &splits.dev, &splits.test}) {
    for (std::size_t i : *part) {
      if (i >= size()) throw IndexError("split index " + std::to_string(i) + " out of range");
      if (seen[i]++) throw ContractError("splits overlap at row " + std::to_string(i));
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw ContractError("splits do not cover every row");
}

namespace {

Dataset unsplit(Tensor features, std::vector<Label> labels, std::size_t k) {
  Dataset d;
  d.features = std::move(features);
  d.labels = std::move(labels);
  d.num_classes = k;
  d.splits.train.resize(d.labels.size());
  std::iota(d.splits.train.begin(), d.splits.train.end(), std::size_t{0});
  return d;
}

// Orthonormalise `v` against `basis` (in place); false if it collapses.
bool gram_schmidt(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
  for (const auto& b : basis) {
    const double dot = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * b[i];
  }
  const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  if (norm < 1e-12) return false;
  for (double& x : v) x /= norm;
  return true;
}

}  // namespace

GaussianMixture make_gaussian_mixture(std::size_t k, std::size_t d, double separation, std::uint64_t seed) {
  if (k < 2) throw ContractError("gaussian mixture needs K >= 2");
  if (d < 1) throw ContractError("gaussian mixture needs D >= 1");
  if (!(separation >= 0.0) || !std::isfinite(separation)) throw ContractError("separation must be >= 0");

  GaussianMixture gm;
  gm.num_classes = k;
  gm.dim = d;
  gm.separation = separation;
  gm.means.assign(k, std::vector<double>(d, 0.0));

  if (k <= d + 1) {
    // Centred simplex vertices e_i - 1/K in R^K, expressed in an orthonormal
    // basis of their (K-1)-dim span; pairwise distance sqrt(2) before scaling.
    std::vector<std::vector<double>> verts(k, std::vector<double>(k, -1.0 / static_cast<double>(k)));
    for (std::size_t i = 0; i < k; ++i) verts[i][i] += 1.0;
    std::vector<std::vector<double>> basis;
    for (std::size_t i = 0; i + 1 < k; ++i) {
      auto v = verts[i];
      if (gram_schmidt(v, basis)) basis.push_back(std::move(v));
    }
    const double scale = separation / std::numbers::sqrt2;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t b = 0; b < basis.size(); ++b) {
        gm.means[i][b] = scale * std::inner_product(verts[i].begin(), verts[i].end(), basis[b].begin(), 0.0);
      }
    }
    return gm;
  }

  if (d == 1) {
    for (std::size_t i = 0; i < k; ++i) {
      gm.means[i][0] = (static_cast<double>(i) - 0.5 * static_cast<double>(k - 1)) * separation;
    }
    return gm;
  }

  Rng rng = make_rng(seed, streams::kData + 100);
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> plane;
  while (plane.size() < 2) {
    std::vector<double> v(d);
    for (double& x : v) x = normal(rng);
    if (gram_schmidt(v, plane)) plane.push_back(std::move(v));
  }
  const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(k)));
  for (std::size_t i = 0; i < k; ++i) {
    const double a = phase + 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k);
    for (std::size_t j = 0; j < d; ++j) {
      gm.means[i][j] = radius * (std::cos(a) * plane[0][j] + std::sin(a) * plane[1][j]);
    }
  }
  return gm;
}

Tensor GaussianMixture::log_posterior(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != dim) {
    throw DimensionError("mixture expects [n x " + std::to_string(dim) + "], got " + shape_string(x.shape()));
  }
  Tensor out(Shape{x.rows(), num_classes});
  std::vector<double> logp(num_classes);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    for (std::size_t c = 0; c < num_classes; ++c) {
      double sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = row[j] - means[c][j];
        sq += diff * diff;
      }
      logp[c] = -0.5 * sq;
    }
    const double lse = log_sum_exp(logp);
    for (std::size_t c = 0; c < num_classes; ++c) out.at(i, c) = logp[c] - lse;
  }
  return out;
}

Tensor GaussianMixture::posterior(const Tensor& x) const {
  Tensor lp = log_posterior(x);
  for (double& v : lp.data()) v = std::exp(v);
  return lp;
}

Dataset gen_gaussian_mixture(std::size_t k, std::size_t d, std::size_t n_per_class, double separation,
                             std::uint64_t seed) {
  if (n_per_class == 0) throw ContractError("n_per_class must be positive");
  const GaussianMixture gm = make_gaussian_mixture(k, d, separation, seed);
  Rng rng = make_rng(seed, streams::kData);
  std::normal_distribution<double> normal;
  Tensor x(Shape{k * n_per_class, d});
  std::vector<Label> y(k * n_per_class);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t s = 0; s < n_per_class; ++s) {
      const std::size_t i = c * n_per_class + s;
      for (std::size_t j = 0; j < d; ++j) x.at(i, j) = gm.means[c][j] + normal(rng);
      y[i] = static_cast<Label>(c);
    }
  }
  return unsplit(std::move(x), std::move(y), k);
}

Dataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw ContractError("two moons needs n >= 2");
  if (!(noise >= 0.0)) throw ContractError("noise must be >= 0");
  const std::size_t n_outer = (n + 1) / 2;
  const std::size_t n_inner = n - n_outer;
  Rng rng = make_rng(seed, streams::kData);
  std::normal_distribution<double> normal(0.0, noise > 0.0 ? noise : 1.0);
  Tensor x(Shape{n, 2});
  std::vector<Label> y(n);
  auto param = [](std::size_t i, std::size_t m) {
    return m > 1 ? std::numbers::pi * static_cast<double>(i) / static_cast<double>(m - 1) : 0.0;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const bool outer = i < n_outer;
    const double t = outer ? param(i, n_outer) : param(i - n_outer, n_inner);
    x.at(i, 0) = outer ? std::cos(t) : 1.0 - std::cos(t);
    x.at(i, 1) = outer ? std::sin(t) : 0.5 - std::sin(t);
    y[i] = outer ? 0 : 1;
  }
  if (noise > 0.0) {
    for (double& v : x.data()) v += normal(rng);
  }
  return unsplit(std::move(x), std::move(y), 2);
}

Dataset gen_spirals(std::size_t n, double turns, double noise, std::uint64_t seed) {
  if (n < 2) throw ContractError("spirals needs n >= 2");
  if (!(turns > 0.0)) throw ContractError("turns must be positive");
  if (!(noise >= 0.0)) throw ContractError("noise must be >= 0");
  const std::size_t n0 = (n + 1) / 2;
  Rng rng = make_rng(seed, streams::kData);
  std::normal_distribution<double> normal(0.0, noise > 0.0 ? noise : 1.0);
  Tensor x(Shape{n, 2});
  std::vector<Label> y(n);
  const double span = 2.0 * std::numbers::pi * turns;
  for (std::size_t i = 0; i < n; ++i) {
    const bool first = i < n0;
    const std::size_t j = first ? i : i - n0;
    const std::size_t m = first ? n0 : n - n0;
    const double frac = m > 1 ? static_cast<double>(j) / static_cast<double>(m - 1) : 0.0;
    const double t = 0.25 * std::numbers::pi + frac * span;
    const double r = t / span;
    const double phase = first ? 0.0 : std::numbers::pi;
    x.at(i, 0) = r * std::cos(t + phase);
    x.at(i, 1) = r * std::sin(t + phase);
    y[i] = first ? 0 : 1;
  }
  if (noise > 0.0) {
    for (double& v : x.data()) v += normal(rng);
  }
  return unsplit(std::move(x), std::move(y), 2);
}

namespace {

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

}  // namespace

Dataset parse_csv(std::istream& in, int label_column, std::size_t num_classes) {
  if (num_classes == 0) throw ContractError("num_classes must be positive");
  std::vector<double> values;
  std::vector<Label> labels;
  std::size_t width = 0;
  std::size_t label_idx = 0;
  bool first = true;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_cells(line);
    std::vector<std::optional<double>> parsed;
    parsed.reserve(cells.size());
    for (auto c : cells) parsed.push_back(parse_double(c));

    if (first) {
      first = false;
      width = cells.size();
      if (width < 2) throw ParseError("need at least one feature column and a label column", row);
      const long resolved = label_column < 0 ? static_cast<long>(width) + label_column : label_column;
      if (resolved < 0 || static_cast<std::size_t>(resolved) >= width) {
        throw ParseError("label column " + std::to_string(label_column) + " outside " + std::to_string(width) +
                         " columns", row);
      }
      label_idx = static_cast<std::size_t>(resolved);
      const bool header = std::any_of(parsed.begin(), parsed.end(), [](const auto& p) { return !p.has_value(); });
      if (header) continue;
    }
    if (cells.size() != width) {
      throw ParseError("expected " + std::to_string(width) + " columns, found " + std::to_string(cells.size()), row);
    }
    for (std::size_t c = 0; c < width; ++c) {
      if (!parsed[c]) throw ParseError("non-numeric cell '" + std::string(cells[c]) + "' in column " + std::to_string(c), row);
      if (c == label_idx) {
        const double v = *parsed[c];
        if (v != std::floor(v) || v < 0.0 || v >= static_cast<double>(num_classes)) {
          throw ParseError("label '" + std::string(cells[c]) + "' is not an integer in [0, " +
                           std::to_string(num_classes) + ")", row);
        }
        labels.push_back(static_cast<Label>(v));
      } else {
        if (!std::isfinite(*parsed[c])) throw ParseError("non-finite feature in column " + std::to_string(c), row);
        values.push_back(*parsed[c]);
      }
    }
  }
  if (labels.empty()) throw ParseError("no data rows");
  const std::size_t n = labels.size();
  return unsplit(Tensor::matrix(n, width - 1, std::move(values)), std::move(labels), num_classes);
}

Dataset ingest_csv(const std::filesystem::path& path, int label_column, std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return parse_csv(in, label_column, num_classes);
}

void write_csv(const Dataset& data, std::ostream& out) {
  const std::size_t d = data.dim();
  for (std::size_t j = 0; j < d; ++j) out << 'x' << j << ',';
  out << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out << format_double(data.features.at(i, j)) << ',';
    out << data.labels[i] << '\n';
  }
}

void export_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_csv(data, out);
}

Dataset split(Dataset data, SplitFractions f, std::uint64_t seed) {
  if (f.train < 0.0 || f.dev < 0.0 || f.test < 0.0 || std::abs(f.train + f.dev + f.test - 1.0) > 1e-9) {
    throw ContractError("split fractions must be non-negative and sum to 1");
  }
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(static_cast<std::size_t>(data.labels[i])).push_back(i);
  Rng rng = make_rng(seed, streams::kSplit);
  Splits s;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) throw ContractError("class " + std::to_string(c) + " has no samples; cannot stratify");
    std::shuffle(idx.begin(), idx.end(), rng);
    const double n = static_cast<double>(idx.size());
    const std::size_t n_train = std::min(idx.size(), static_cast<std::size_t>(std::llround(n * f.train)));
    const std::size_t n_dev = std::min(idx.size() - n_train, static_cast<std::size_t>(std::llround(n * f.dev)));
    s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<long>(n_train));
    s.dev.insert(s.dev.end(), idx.begin() + static_cast<long>(n_train), idx.begin() + static_cast<long>(n_train + n_dev));
    s.test.insert(s.test.end(), idx.begin() + static_cast<long>(n_train + n_dev), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.dev.begin(), s.dev.end());
  std::sort(s.test.begin(), s.test.end());
  data.splits = std::move(s);
  return data;
}

Dataset standardize(Dataset data) {
  if (data.normalization) throw ContractError("dataset is already standardized");
  const auto& train = data.splits.train;
  if (train.empty()) throw ContractError("standardize needs a non-empty train split");
  const std::size_t d = data.dim();
  Normalization norm;
  norm.raw_dim = d;
  const double n = static_cast<double>(train.size());
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i : train) m += data.features.at(i, j);
    m /= n;
    double var = 0.0;
    for (std::size_t i : train) {
      const double diff = data.features.at(i, j) - m;
      var += diff * diff;
    }
    const double sd = std::sqrt(var / n);
    if (sd <= 1e-12 * std::max(1.0, std::abs(m))) continue;
    norm.kept.push_back(j);
    norm.mean.push_back(m);
    norm.stddev.push_back(sd);
  }
  if (norm.kept.empty()) throw ContractError("every feature is constant on the train split");
  data.features = norm.apply(data.features);
  data.normalization = std::move(norm);
  return data;
}

std::size_t clip_to_box(Dataset& data, DataBox box) {
  std::size_t moved = 0;
  for (double& v : data.features.data()) {
    if (!box.contains(v)) {
      v = box.clamp(v);
      ++moved;
    }
  }
  return moved;
}

}  // namespace jemcal
