#pragma once

// Calibration metrics and post-hoc calibrators.
//
// Confidence bins are equal-width, left-open/right-closed on (0, 1]:
// bin b (0-based) holds b/B < c <= (b+1)/B, and c == 0 falls in bin 0.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "jemcal/tensor.hpp"

namespace jemcal {

inline constexpr std::size_t kDefaultBins = 15;
inline constexpr double kProbabilityFloor = 1e-12;

struct PredictionSet {
  Tensor probs;  // [n x K], rows on the simplex
  std::vector<Label> labels;
  std::optional<Tensor> logits;  // [n x K]; probs == softmax(logits) when present

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t num_classes() const noexcept { return probs.cols(); }

  /// Builds probs = softmax(logits) row-wise.
  static PredictionSet from_logits(Tensor logits, std::vector<Label> labels);
  /// Throws ContractError unless shapes agree, labels are in range and every
  /// row is a distribution to within `tolerance`.
  void validate(double tolerance = 1e-9) const;
};

struct Confidence {
  Label predicted = 0;
  double value = 0.0;
};

/// Argmax (ties to the lowest index) and its probability.
Confidence confidence(std::span<const double> probs);

std::size_t bin_index(double confidence, std::size_t bins);
double bin_lower(std::size_t b, std::size_t bins);
double bin_upper(std::size_t b, std::size_t bins);

double accuracy(const PredictionSet& preds);

struct NllStats {
  double value = 0.0;
  std::size_t floored = 0;  // true-label probabilities raised to kProbabilityFloor
};
/// Mean -log p(y|x). Uses log-softmax of the logits when present, otherwise
/// the stored probabilities.
NllStats nll_stats(const PredictionSet& preds);
double nll(const PredictionSet& preds);

struct ReliabilityBin {
  double low = 0.0;
  double high = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;  // 0 for empty bins
  double mean_accuracy = 0.0;    // 0 for empty bins
};

struct ReliabilityReport {
  std::vector<ReliabilityBin> bins;
  std::size_t total = 0;
  double ece = 0.0;
};

ReliabilityReport reliability_report(const PredictionSet& preds, std::size_t bins = kDefaultBins);
double ece(const PredictionSet& preds, std::size_t bins = kDefaultBins);

struct HistogramBin {
  double low = 0.0;
  double high = 0.0;
  std::size_t correct = 0;
  std::size_t incorrect = 0;
};

struct ConfidenceHistogram {
  std::vector<HistogramBin> bins;
  std::size_t total() const noexcept;
};

ConfidenceHistogram confidence_histogram(const PredictionSet& preds, std::size_t bins = kDefaultBins);

/// Wrong predictions whose confidence exceeds `threshold`.
std::size_t overconfident_errors(const PredictionSet& preds, double threshold = 0.9);

// ---------------------------------------------------------------------------
// Post-hoc calibrators, fitted on a development PredictionSet with logits.

struct TemperatureCalibrator {
  double temperature = 1.0;
};

enum class LogisticVariant {
  tied,    // W = a * I (one shared scale) plus bias
  vector,  // diagonal W plus bias
  matrix,  // full W plus bias
};

std::string to_string(LogisticVariant v);
LogisticVariant logistic_variant_from_string(const std::string& name);

/// z' = W z + b, W stored row-major [K x K].
struct AffineCalibrator {
  LogisticVariant variant = LogisticVariant::matrix;
  Tensor weight;
  std::vector<double> bias;

  static AffineCalibrator identity(std::size_t k, LogisticVariant variant);
};

using Calibrator = std::variant<TemperatureCalibrator, AffineCalibrator>;

struct TemperatureFitOptions {
  double min_temperature = 1e-2;
  double max_temperature = 1e2;
  double tolerance = 1e-4;  // on log T
};

/// Minimises dev NLL of softmax(logits / T) by golden-section search on log T.
/// Falls back to T = 1 if the search ends worse than the identity.
double fit_temperature(const PredictionSet& dev, const TemperatureFitOptions& options = {});

struct LogisticFitOptions {
  int steps = 500;
  double step_size = 0.1;
  double l2 = 1e-4;  // on (W - I, b)
};

/// Gradient descent from (I, 0) on dev NLL + l2 * (|W - I|^2 + |b|^2).
/// A step that would increase the penalised objective is halved until it
/// does not. Returns the visited iterate with the lowest dev NLL, so the
/// result is never worse than the identity map.
AffineCalibrator fit_logistic_scaling(const PredictionSet& dev, LogisticVariant variant,
                                      const LogisticFitOptions& options = {});

/// New PredictionSet from transformed logits; `preds` is left untouched.
PredictionSet apply_calibrator(const PredictionSet& preds, const Calibrator& calibrator);

/// Mean -log softmax(logits / T)[y], computed in log space.
double nll_of_logits(const Tensor& logits, std::span<const Label> labels, double temperature = 1.0);

}  // namespace jemcal
