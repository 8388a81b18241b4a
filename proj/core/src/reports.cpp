#include "jemcal/reports.hpp"

#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <string_view>

#include "jemcal/error.hpp"
#include "jemcal/numfmt.hpp"

namespace jemcal {

void write_reliability_csv(std::ostream& out, const ReliabilityReport& report, double nll_value, double acc) {
  out << "bin_low,bin_high,count,mean_confidence,mean_accuracy\n";
  for (const auto& b : report.bins) {
    out << format_double(b.low) << ',' << format_double(b.high) << ',' << b.count << ','
        << format_double(b.mean_confidence) << ',' << format_double(b.mean_accuracy) << '\n';
  }
  out << "ece," << format_double(report.ece) << ",,,\n";
  out << "nll," << format_double(nll_value) << ",,,\n";
  out << "accuracy," << format_double(acc) << ",,,\n";
}

void write_histogram_csv(std::ostream& out, const ConfidenceHistogram& hist) {
  out << "bin_low,bin_high,correct,incorrect\n";
  for (const auto& b : hist.bins) {
    out << format_double(b.low) << ',' << format_double(b.high) << ',' << b.correct << ',' << b.incorrect << '\n';
  }
}

void write_predictions_csv(std::ostream& out, const PredictionSet& preds) {
  const std::size_t k = preds.num_classes();
  out << "label";
  if (preds.logits) {
    for (std::size_t j = 0; j < k; ++j) out << ",logit_" << j;
  }
  for (std::size_t j = 0; j < k; ++j) out << ",prob_" << j;
  out << '\n';
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out << preds.labels[i];
    if (preds.logits) {
      for (double v : preds.logits->row(i)) out << ',' << format_double(v);
    }
    for (double v : preds.probs.row(i)) out << ',' << format_double(v);
    out << '\n';
  }
}

namespace {

std::vector<std::string_view> cells_of(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) return cells;
    start = comma + 1;
  }
}

}  // namespace

PredictionSet read_predictions_csv(std::istream& in) {
  std::string line;
  std::size_t row = 0;
  std::vector<std::string_view> header;
  std::string header_line;
  while (std::getline(in, line)) {
    ++row;
    if (!trim(line).empty()) {
      header_line = line;
      break;
    }
  }
  if (header_line.empty()) throw ParseError("empty prediction log");
  header = cells_of(header_line);
  if (header.empty() || header[0] != "label") throw ParseError("first column must be 'label'", row);
  std::size_t n_logit = 0, n_prob = 0;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const std::string_view h = header[c];
    if (h.rfind("logit_", 0) == 0) {
      if (n_prob) throw ParseError("logit columns must precede prob columns", row);
      ++n_logit;
    } else if (h.rfind("prob_", 0) == 0) {
      ++n_prob;
    } else {
      throw ParseError("unexpected column '" + std::string(h) + "'", row);
    }
  }
  if (n_prob == 0) throw ParseError("no prob_ columns", row);
  if (n_logit != 0 && n_logit != n_prob) throw ParseError("logit and prob column counts differ", row);
  const std::size_t k = n_prob;

  std::vector<Label> labels;
  std::vector<double> probs, logits;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = cells_of(line);
    if (cells.size() != 1 + n_logit + n_prob) {
      throw ParseError("expected " + std::to_string(1 + n_logit + n_prob) + " columns, found " +
                       std::to_string(cells.size()), row);
    }
    const auto y = parse_double(cells[0]);
    if (!y || *y != std::floor(*y) || *y < 0.0 || *y >= static_cast<double>(k)) {
      throw ParseError("label '" + std::string(cells[0]) + "' is not a class index in [0, " + std::to_string(k) + ")",
                       row);
    }
    labels.push_back(static_cast<Label>(*y));
    for (std::size_t c = 1; c <= n_logit; ++c) {
      const auto v = parse_double(cells[c]);
      if (!v || !std::isfinite(*v)) throw ParseError("bad logit '" + std::string(cells[c]) + "'", row);
      logits.push_back(*v);
    }
    double total = 0.0;
    for (std::size_t c = 1 + n_logit; c < cells.size(); ++c) {
      const auto v = parse_double(cells[c]);
      if (!v || !(*v >= 0.0 && *v <= 1.0)) throw ParseError("bad probability '" + std::string(cells[c]) + "'", row);
      probs.push_back(*v);
      total += *v;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ParseError("probabilities sum to " + format_double(total) + ", not 1", row);
    }
  }
  if (labels.empty()) throw ParseError("prediction log has no data rows");
  PredictionSet p;
  const std::size_t n = labels.size();
  p.probs = Tensor::matrix(n, k, std::move(probs));
  p.labels = std::move(labels);
  if (n_logit) p.logits = Tensor::matrix(n, k, std::move(logits));
  return p;
}

void write_metrics_csv(std::ostream& out, const std::vector<std::pair<std::string, double>>& rows) {
  out << "metric,value\n";
  for (const auto& [name, value] : rows) out << name << ',' << format_double(value) << '\n';
}

}  // namespace jemcal
