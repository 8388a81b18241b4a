#pragma once

// CSV plot data for reliability diagrams, confidence histograms, metric
// summaries and per-sample prediction logs. Numbers are written in the
// shortest form that reads back to the identical double.

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "jemcal/calibration.hpp"

namespace jemcal {

/// `bin_low,bin_high,count,mean_confidence,mean_accuracy`, one row per bin,
/// then footer rows `ece,<v>,,,`, `nll,<v>,,,`, `accuracy,<v>,,,`.
void write_reliability_csv(std::ostream& out, const ReliabilityReport& report, double nll, double accuracy);

/// `bin_low,bin_high,correct,incorrect`.
void write_histogram_csv(std::ostream& out, const ConfidenceHistogram& hist);

/// `label,logit_0..logit_{K-1},prob_0..prob_{K-1}`; logit columns are
/// omitted when the set carries no logits.
void write_predictions_csv(std::ostream& out, const PredictionSet& preds);

/// Inverse of write_predictions_csv. Throws ParseError (with the 1-based
/// line number) on malformed rows, an empty log, or probability rows that
/// do not sum to 1 within 1e-6.
PredictionSet read_predictions_csv(std::istream& in);

/// `metric,value` rows.
void write_metrics_csv(std::ostream& out, const std::vector<std::pair<std::string, double>>& rows);

}  // namespace jemcal
