#include "cormult/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "cormult/data_io.hpp"
#include "cormult/errors.hpp"

namespace cormult::metrics {
namespace {

template <class A, class B>
void check(const A& a, const B& b) {
  if (a.size() != b.size()) {
    throw LengthMismatch(std::to_string(a.size()) + " predictions vs " + std::to_string(b.size()) + " labels");
  }
  if (a.empty()) throw Empty("no samples");
}

}  // namespace

double acc7(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  check(preds, labels);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

std::size_t argmax(const Probs& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

double expected_score(const Probs& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * (static_cast<double>(i) - 3.0);
  return s;
}

double acc2(std::span<const Probs> probs, std::span<const double> labels, Acc2Variant variant) {
  check(probs, labels);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (variant == Acc2Variant::Top2) {
      const std::size_t first = argmax(probs[i]);
      std::size_t second = first == 0 ? 1 : 0;
      for (std::size_t c = 0; c < 7; ++c) {
        if (c != first && probs[i][c] > probs[i][second]) second = c;
      }
      const std::size_t truth = data::label_to_class(labels[i]);
      hit += truth == first || truth == second;
    } else {
      hit += (expected_score(probs[i]) >= 0.0) == (labels[i] >= 0.0);
    }
  }
  return static_cast<double>(hit) / static_cast<double>(probs.size());
}

double f1_weighted(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  check(preds, labels);
  std::array<std::size_t, 7> tp{}, pred_n{}, true_n{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] > 6 || labels[i] > 6) throw OutOfRange("class index outside 0..6");
    ++pred_n[preds[i]];
    ++true_n[labels[i]];
    tp[preds[i]] += preds[i] == labels[i];
  }
  double total = 0.0;
  for (std::size_t c = 0; c < 7; ++c) {
    if (true_n[c] == 0) continue;
    // F1 = 2 tp / (|pred| + |true|), which is 0 when tp is 0.
    const double f1 = 2.0 * static_cast<double>(tp[c]) / static_cast<double>(pred_n[c] + true_n[c]);
    total += f1 * static_cast<double>(true_n[c]);
  }
  return total / static_cast<double>(preds.size());
}

double mae(std::span<const double> scores, std::span<const double> labels) {
  check(scores, labels);
  double s = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) s += std::fabs(scores[i] - labels[i]);
  return s / static_cast<double>(scores.size());
}

double corr(std::span<const double> scores, std::span<const double> labels) {
  check(scores, labels);
  const auto n = static_cast<double>(scores.size());
  double ms = 0.0, ml = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    ms += scores[i];
    ml += labels[i];
  }
  ms /= n;
  ml /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double a = scores[i] - ms, b = labels[i] - ml;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) throw ZeroVariance("pearson correlation of a constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double separation_auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw Empty("separation_auc needs both positive and negative scores");
  std::vector<double> sorted(neg.begin(), neg.end());
  std::sort(sorted.begin(), sorted.end());
  // Twice the win count plus the tie count, kept integral so the result is exact.
  std::size_t twice = 0;
  for (double p : pos) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), p);
    const auto hi = std::upper_bound(lo, sorted.end(), p);
    twice += 2 * static_cast<std::size_t>(lo - sorted.begin()) + static_cast<std::size_t>(hi - lo);
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

EvalReport evaluate(std::span<const Probs> probs, std::span<const double> labels) {
  check(probs, labels);
  std::vector<std::size_t> pred, truth;
  std::vector<double> scores;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    pred.push_back(argmax(probs[i]));
    truth.push_back(data::label_to_class(labels[i]));
    scores.push_back(expected_score(probs[i]));
  }
  EvalReport r;
  r.n = probs.size();
  r.acc7 = acc7(pred, truth);
  r.acc2_top2 = acc2(probs, labels, Acc2Variant::Top2);
  r.acc2_binary = acc2(probs, labels, Acc2Variant::Binary);
  r.f1_weighted = f1_weighted(pred, truth);
  r.mae = mae(scores, labels);
  try {
    r.corr = corr(scores, labels);
  } catch (const ZeroVariance&) {
    r.corr = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

std::string EvalReport::to_json() const {
  auto num = [](double v) { return std::isnan(v) ? std::string("null") : fmt::format("{:.6f}", v); };
  return fmt::format(
      R"({{"n":{},"acc7":{},"acc2_top2":{},"acc2_binary":{},"f1_weighted":{},"mae":{},"corr":{}}})", n,
      num(acc7), num(acc2_top2), num(acc2_binary), num(f1_weighted), num(mae), num(corr));
}

std::string EvalReport::to_table() const {
  std::string s = fmt::format("{:<12} {:>10}\n", "metric", "value");
  auto row = [&](const char* name, double v) { s += fmt::format("{:<12} {:>10.4f}\n", name, v); };
  row("Acc@7", acc7);
  row("Acc@2(top2)", acc2_top2);
  row("Acc@2(bin)", acc2_binary);
  row("F1(w)", f1_weighted);
  row("MAE", mae);
  row("Corr", corr);
  s += fmt::format("{:<12} {:>10}\n", "n", n);
  return s;
}

}  // namespace cormult::metrics
