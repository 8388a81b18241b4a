#include "jemcal/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "jemcal/error.hpp"
#include "jemcal/model.hpp"

namespace jemcal {

PredictionSet PredictionSet::from_logits(Tensor logits, std::vector<Label> labels) {
  PredictionSet p;
  p.probs = posterior_from_logits(logits);
  p.labels = std::move(labels);
  p.logits = std::move(logits);
  return p;
}

void PredictionSet::validate(double tolerance) const {
  if (probs.rank() != 2) throw ContractError("prediction probabilities must be an [n x K] matrix");
  if (probs.rows() != labels.size()) {
    throw ContractError(std::to_string(labels.size()) + " labels for " + std::to_string(probs.rows()) +
                        " prediction rows");
  }
  const std::size_t k = probs.cols();
  if (k == 0) throw ContractError("predictions need at least one class");
  if (logits && logits->shape() != probs.shape()) throw ContractError("logits and probabilities differ in shape");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ContractError("row " + std::to_string(i) + ": label " + std::to_string(labels[i]) + " out of range");
    }
    double s = 0.0;
    for (double p : probs.row(i)) {
      if (!(p >= 0.0 && p <= 1.0)) throw ContractError("row " + std::to_string(i) + ": probability outside [0, 1]");
      s += p;
    }
    if (std::abs(s - 1.0) > tolerance) {
      throw ContractError("row " + std::to_string(i) + ": probabilities sum to " + std::to_string(s));
    }
  }
}

Confidence confidence(std::span<const double> probs) {
  Confidence c;
  if (probs.empty()) return c;
  c.value = probs[0];
  for (std::size_t j = 1; j < probs.size(); ++j) {
    if (probs[j] > c.value) {
      c.value = probs[j];
      c.predicted = static_cast<Label>(j);
    }
  }
  return c;
}

double bin_lower(std::size_t b, std::size_t bins) { return static_cast<double>(b) / static_cast<double>(bins); }
double bin_upper(std::size_t b, std::size_t bins) { return static_cast<double>(b + 1) / static_cast<double>(bins); }

std::size_t bin_index(double c, std::size_t bins) {
  if (bins == 0) throw ContractError("bin count must be positive");
  if (!(c > 0.0)) return 0;
  if (c >= 1.0) return bins - 1;
  const double scaled = std::ceil(c * static_cast<double>(bins)) - 1.0;
  std::size_t b = scaled <= 0.0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(scaled));
  // Make membership agree with the edge comparison low < c <= high.
  while (b > 0 && c <= bin_lower(b, bins)) --b;
  while (b + 1 < bins && c > bin_upper(b, bins)) ++b;
  return b;
}

namespace {

void require_nonempty(const PredictionSet& preds) {
  if (preds.size() == 0) throw ContractError("empty prediction set");
  if (preds.probs.rank() != 2 || preds.probs.rows() != preds.size()) {
    throw ContractError("prediction set shape does not match its labels");
  }
}

}  // namespace

double accuracy(const PredictionSet& preds) {
  require_nonempty(preds);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += confidence(preds.probs.row(i)).predicted == preds.labels[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

NllStats nll_stats(const PredictionSet& preds) {
  require_nonempty(preds);
  NllStats s;
  const double cap = -std::log(kProbabilityFloor);
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto y = static_cast<std::size_t>(preds.labels[i]);
    double term;
    if (preds.logits) {
      const auto row = preds.logits->row(i);
      term = log_sum_exp(row) - row[y];
    } else {
      const double p = preds.probs.at(i, y);
      term = p < kProbabilityFloor ? cap + 1.0 : -std::log(p);
    }
    if (term > cap) {
      term = cap;
      ++s.floored;
    }
    // Running mean: a constant term is reproduced exactly.
    total += (term - total) / static_cast<double>(i + 1);
  }
  s.value = total;
  return s;
}

double nll(const PredictionSet& preds) { return nll_stats(preds).value; }

ReliabilityReport reliability_report(const PredictionSet& preds, std::size_t bins) {
  require_nonempty(preds);
  if (bins == 0) throw ContractError("bin count must be positive");
  std::vector<double> conf_sum(bins, 0.0);
  std::vector<double> hit_sum(bins, 0.0);
  ReliabilityReport r;
  r.bins.resize(bins);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Confidence c = confidence(preds.probs.row(i));
    const std::size_t b = bin_index(c.value, bins);
    ++r.bins[b].count;
    conf_sum[b] += c.value;
    hit_sum[b] += c.predicted == preds.labels[i] ? 1.0 : 0.0;
  }
  r.total = preds.size();
  const double n = static_cast<double>(r.total);
  for (std::size_t b = 0; b < bins; ++b) {
    ReliabilityBin& bin = r.bins[b];
    bin.low = bin_lower(b, bins);
    bin.high = bin_upper(b, bins);
    if (bin.count == 0) continue;
    const double cnt = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / cnt;
    bin.mean_accuracy = hit_sum[b] / cnt;
    r.ece += (cnt / n) * std::abs(bin.mean_accuracy - bin.mean_confidence);
  }
  return r;
}

double ece(const PredictionSet& preds, std::size_t bins) { return reliability_report(preds, bins).ece; }

std::size_t ConfidenceHistogram::total() const noexcept {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.correct + b.incorrect;
  return n;
}

ConfidenceHistogram confidence_histogram(const PredictionSet& preds, std::size_t bins) {
  require_nonempty(preds);
  if (bins == 0) throw ContractError("bin count must be positive");
  ConfidenceHistogram h;
  h.bins.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    h.bins[b].low = bin_lower(b, bins);
    h.bins[b].high = bin_upper(b, bins);
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Confidence c = confidence(preds.probs.row(i));
    auto& bin = h.bins[bin_index(c.value, bins)];
    if (c.predicted == preds.labels[i]) {
      ++bin.correct;
    } else {
      ++bin.incorrect;
    }
  }
  return h;
}

std::size_t overconfident_errors(const PredictionSet& preds, double threshold) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Confidence c = confidence(preds.probs.row(i));
    if (c.predicted != preds.labels[i] && c.value > threshold) ++n;
  }
  return n;
}

std::string to_string(LogisticVariant v) {
  switch (v) {
    case LogisticVariant::tied: return "tied";
    case LogisticVariant::vector: return "vector";
    case LogisticVariant::matrix: return "matrix";
  }
  return "unknown";
}

LogisticVariant logistic_variant_from_string(const std::string& name) {
  if (name == "tied") return LogisticVariant::tied;
  if (name == "vector") return LogisticVariant::vector;
  if (name == "matrix") return LogisticVariant::matrix;
  throw ContractError("unknown logistic variant '" + name + "'");
}

AffineCalibrator AffineCalibrator::identity(std::size_t k, LogisticVariant variant) {
  AffineCalibrator a;
  a.variant = variant;
  a.weight = Tensor(Shape{k, k});
  for (std::size_t i = 0; i < k; ++i) a.weight.at(i, i) = 1.0;
  a.bias.assign(k, 0.0);
  return a;
}

double nll_of_logits(const Tensor& logits, std::span<const Label> labels, double temperature) {
  const std::size_t n = logits.rows(), k = logits.cols();
  std::vector<double> scaled(k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.row(i);
    for (std::size_t j = 0; j < k; ++j) scaled[j] = row[j] / temperature;
    total += log_sum_exp(scaled) - scaled[static_cast<std::size_t>(labels[i])];
  }
  return total / static_cast<double>(n);
}

namespace {

const Tensor& require_dev_logits(const PredictionSet& dev) {
  if (!dev.logits) throw ContractError("calibrator fitting needs a prediction set with logits");
  const Tensor& z = *dev.logits;
  const std::size_t k = z.cols();
  if (z.rows() != dev.size()) throw ContractError("logits rows do not match labels");
  if (dev.size() < k) {
    throw FitError("dev set has " + std::to_string(dev.size()) + " samples, fewer than K=" + std::to_string(k));
  }
  std::set<Label> present(dev.labels.begin(), dev.labels.end());
  if (present.size() < 2) throw FitError("dev set contains a single class; calibration is undetermined");
  if (!z.all_finite()) throw FitError("dev logits contain non-finite values");
  return z;
}

Tensor affine_logits(const Tensor& z, const AffineCalibrator& a) {
  const std::size_t n = z.rows(), k = z.cols();
  if (a.weight.shape() != Shape{k, k} || a.bias.size() != k) {
    throw DimensionError("calibrator for K=" + std::to_string(a.bias.size()) + " applied to K=" + std::to_string(k));
  }
  Tensor out(Shape{n, k});
  for (std::size_t i = 0; i < n; ++i) {
    auto zi = z.row(i);
    auto oi = out.row(i);
    for (std::size_t r = 0; r < k; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += a.weight.at(r, c) * zi[c];
      oi[r] = s + a.bias[r];
    }
  }
  return out;
}

struct Objective {
  double nll = 0.0;
  double penalised = 0.0;
};

// The fit runs on column-centred logits zc = z - mu with parameters (W, c),
// where c = b + W mu. Same affine family and objective as (W, b) on z, but
// without the coupling between W and b that a large shared logit offset
// causes.
std::vector<double> original_bias(const AffineCalibrator& a, std::span<const double> mu) {
  const std::size_t k = a.bias.size();
  std::vector<double> b(k);
  for (std::size_t r = 0; r < k; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += a.weight.at(r, c) * mu[c];
    b[r] = a.bias[r] - s;
  }
  return b;
}

Objective evaluate_affine(const Tensor& zc, std::span<const Label> y, const AffineCalibrator& a,
                          std::span<const double> mu, double l2) {
  Objective o;
  o.nll = nll_of_logits(affine_logits(zc, a), y);
  const std::vector<double> b = original_bias(a, mu);
  double pen = 0.0;
  const std::size_t k = a.bias.size();
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      const double d = a.weight.at(r, c) - (r == c ? 1.0 : 0.0);
      pen += d * d;
    }
    pen += b[r] * b[r];
  }
  o.penalised = o.nll + l2 * pen;
  return o;
}

// Gradient of the penalised objective, projected onto the variant's free parameters.
AffineCalibrator affine_gradient(const Tensor& zc, std::span<const Label> y, const AffineCalibrator& a,
                                 std::span<const double> mu, double l2) {
  const std::size_t n = zc.rows(), k = zc.cols();
  AffineCalibrator g;
  g.variant = a.variant;
  g.weight = Tensor(Shape{k, k});
  g.bias.assign(k, 0.0);
  const Tensor zp = affine_logits(zc, a);
  std::vector<double> p(k);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    softmax(zp.row(i), p);
    p[static_cast<std::size_t>(y[i])] -= 1.0;
    auto zi = zc.row(i);
    for (std::size_t r = 0; r < k; ++r) {
      const double gr = p[r] * inv_n;
      g.bias[r] += gr;
      for (std::size_t c = 0; c < k; ++c) g.weight.at(r, c) += gr * zi[c];
    }
  }
  const std::vector<double> b = original_bias(a, mu);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      g.weight.at(r, c) += 2.0 * l2 * (a.weight.at(r, c) - (r == c ? 1.0 : 0.0) - b[r] * mu[c]);
    }
    g.bias[r] += 2.0 * l2 * b[r];
  }
  if (a.variant != LogisticVariant::matrix) {
    double diag_sum = 0.0;
    for (std::size_t r = 0; r < k; ++r) diag_sum += g.weight.at(r, r);
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < k; ++c) {
        if (r != c) {
          g.weight.at(r, c) = 0.0;
        } else if (a.variant == LogisticVariant::tied) {
          g.weight.at(r, c) = diag_sum / static_cast<double>(k);
        }
      }
    }
  }
  return g;
}

AffineCalibrator step(const AffineCalibrator& a, const AffineCalibrator& g, double eta) {
  AffineCalibrator out = a;
  for (std::size_t i = 0; i < out.weight.size(); ++i) out.weight[i] -= eta * g.weight[i];
  for (std::size_t r = 0; r < out.bias.size(); ++r) out.bias[r] -= eta * g.bias[r];
  return out;
}

}  // namespace

double fit_temperature(const PredictionSet& dev, const TemperatureFitOptions& options) {
  const Tensor& z = require_dev_logits(dev);
  if (!(options.min_temperature > 0.0) || !(options.max_temperature > options.min_temperature)) {
    throw ContractError("temperature search range must satisfy 0 < min < max");
  }
  auto objective = [&](double log_t) { return nll_of_logits(z, dev.labels, std::exp(log_t)); };

  // Golden-section search for the minimum of a unimodal function of log T.
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = std::log(options.min_temperature);
  double hi = std::log(options.max_temperature);
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = objective(x1);
  double f2 = objective(x2);
  while (hi - lo > options.tolerance) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = objective(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = objective(x2);
    }
  }
  const double best = std::exp(0.5 * (lo + hi));
  if (objective(std::log(best)) > nll_of_logits(z, dev.labels, 1.0)) return 1.0;
  return best;
}

AffineCalibrator fit_logistic_scaling(const PredictionSet& dev, LogisticVariant variant,
                                      const LogisticFitOptions& options) {
  const Tensor& z = require_dev_logits(dev);
  if (options.steps < 0 || !(options.step_size > 0.0) || options.l2 < 0.0) {
    throw ContractError("invalid logistic scaling options");
  }
  const std::size_t n = z.rows(), k = z.cols();
  std::vector<double> mu(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) mu[c] += z.at(i, c);
  }
  for (double& m : mu) m /= static_cast<double>(n);
  Tensor zc = z;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) zc.at(i, c) -= mu[c];
  }

  AffineCalibrator current = AffineCalibrator::identity(k, variant);
  current.bias = mu;
  Objective cur = evaluate_affine(zc, dev.labels, current, mu, options.l2);
  AffineCalibrator best = AffineCalibrator::identity(k, variant);
  double best_nll = nll_of_logits(z, dev.labels);

  for (int it = 0; it < options.steps; ++it) {
    const AffineCalibrator grad = affine_gradient(zc, dev.labels, current, mu, options.l2);
    double eta = options.step_size;
    bool moved = false;
    for (int halvings = 0; halvings < 40; ++halvings, eta *= 0.5) {
      AffineCalibrator cand = step(current, grad, eta);
      const Objective o = evaluate_affine(zc, dev.labels, cand, mu, options.l2);
      if (std::isfinite(o.penalised) && o.penalised <= cur.penalised) {
        current = std::move(cand);
        cur = o;
        moved = true;
        break;
      }
    }
    if (!moved) break;
    if (cur.nll < best_nll) {
      AffineCalibrator cand = current;
      cand.bias = original_bias(current, mu);
      const double nll = nll_of_logits(affine_logits(z, cand), dev.labels);
      if (nll < best_nll) {
        best_nll = nll;
        best = std::move(cand);
      }
    }
  }
  return best;
}

PredictionSet apply_calibrator(const PredictionSet& preds, const Calibrator& calibrator) {
  if (!preds.logits) throw ContractError("apply_calibrator needs a prediction set with logits");
  PredictionSet out;
  out.labels = preds.labels;
  if (const auto* t = std::get_if<TemperatureCalibrator>(&calibrator)) {
    if (!(t->temperature > 0.0)) throw ContractError("temperature must be positive");
    Tensor z = *preds.logits;
    for (double& v : z.data()) v /= t->temperature;
    out.probs = posterior_from_logits(z);
    out.logits = std::move(z);
  } else {
    Tensor z = affine_logits(*preds.logits, std::get<AffineCalibrator>(calibrator));
    out.probs = posterior_from_logits(z);
    out.logits = std::move(z);
  }
  return out;
}

}  // namespace jemcal
