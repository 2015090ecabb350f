#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cormult::metrics {

using Probs = std::array<double, 7>;

// Throws LengthMismatch or Empty.
double acc7(std::span<const std::size_t> preds, std::span<const std::size_t> labels);

enum class Acc2Variant { Top2, Binary };

// Top2: the label's class is one of the two most probable (ties to the lower
// index). Binary: sign of sum_i p_i (i - 3) matches the sign of the label,
// with zero counted as non-negative.
double acc2(std::span<const Probs> probs, std::span<const double> labels, Acc2Variant variant);

// Per-class F1 weighted by true-class support; a class with neither support
// nor predictions scores 0.
double f1_weighted(std::span<const std::size_t> preds, std::span<const std::size_t> labels);

double mae(std::span<const double> scores, std::span<const double> labels);
// Pearson. Throws ZeroVariance.
double corr(std::span<const double> scores, std::span<const double> labels);

// P(pos > neg) over all pairs, ties count one half. Throws Empty.
double separation_auc(std::span<const double> pos, std::span<const double> neg);

// Class with the highest probability, lowest index on ties.
std::size_t argmax(const Probs& p);
// sum_i p_i (i - 3).
double expected_score(const Probs& p);

struct EvalReport {
  double acc7 = 0.0;
  double acc2_top2 = 0.0;
  double acc2_binary = 0.0;
  double f1_weighted = 0.0;
  double mae = 0.0;
  double corr = 0.0;  // NaN when either side has zero variance
  std::size_t n = 0;

  std::string to_json() const;
  std::string to_table() const;
};

EvalReport evaluate(std::span<const Probs> probs, std::span<const double> labels);

}  // namespace cormult::metrics
