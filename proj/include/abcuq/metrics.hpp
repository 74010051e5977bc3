#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "abcuq/core.hpp"
#include "abcuq/error.hpp"

namespace abcuq {

inline constexpr int kDefaultEceBins = 10;

/// Evaluation summary. Fields that are undefined for the input (every metric
/// but entropy on out-of-distribution data, AUROC without both outcomes) are empty.
struct MetricsReport {
  std::optional<double> accuracy;
  std::optional<double> macro_f1;
  std::optional<double> auroc;
  std::optional<double> brier;
  std::optional<double> ece;
  double mean_entropy_bits = 0.0;
  std::size_t n = 0;
  std::vector<double> per_class_f1;
};

namespace detail {
inline void require_records(std::span<const PredictionRecord> records) {
  require(!records.empty(), ErrorKind::Contract, "metric over an empty record list");
}
}  // namespace detail

/// Expected calibration error over `bins` equal-width confidence bins. Bin m
/// covers [m/M, (m+1)/M); a confidence of exactly 1 goes to the top bin.
inline double ece(std::span<const PredictionRecord> records, int bins = kDefaultEceBins) {
  detail::require_records(records);
  require(bins >= 1, ErrorKind::Contract, "ece needs bins >= 1");
  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> correct_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
  for (const auto& r : records) {
    require(r.confidence >= 0.0 && r.confidence <= 1.0, ErrorKind::Contract,
            "confidence outside [0,1]");
    auto m = static_cast<std::size_t>(std::floor(r.confidence * bins));
    m = std::min(m, static_cast<std::size_t>(bins - 1));
    conf_sum[m] += r.confidence;
    correct_sum[m] += r.correct ? 1.0 : 0.0;
    ++count[m];
  }
  const auto n = static_cast<double>(records.size());
  double total = 0.0;
  for (std::size_t m = 0; m < count.size(); ++m) {
    if (count[m] == 0) continue;
    const auto c = static_cast<double>(count[m]);
    total += (c / n) * std::abs(correct_sum[m] / c - conf_sum[m] / c);
  }
  return total;
}

/// Mean squared gap between predicted-class confidence and correctness.
inline double brier(std::span<const PredictionRecord> records) {
  detail::require_records(records);
  double s = 0.0;
  for (const auto& r : records) {
    const double y = r.correct ? 1.0 : 0.0;
    s += (r.confidence - y) * (r.confidence - y);
  }
  return s / static_cast<double>(records.size());
}

/// Shannon entropy in bits, with 0 log 0 = 0.
inline double entropy_bits(std::span<const double> probs) {
  check_probability_vector(probs, 1e-6);
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log2(p);
  return std::max(h, 0.0);
}

inline double accuracy(std::span<const PredictionRecord> records) {
  detail::require_records(records);
  std::size_t hits = 0;
  for (const auto& r : records) hits += r.correct ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

/// Unweighted mean of per-class F1 over all k classes; a class with
/// precision + recall = 0 (including one never seen) contributes 0.
inline std::pair<double, std::vector<double>> macro_f1(std::span<const PredictionRecord> records,
                                                       std::size_t k) {
  detail::require_records(records);
  require(k >= 1, ErrorKind::Contract, "macro_f1 needs k >= 1");
  std::vector<double> tp(k, 0.0), fp(k, 0.0), fn(k, 0.0);
  for (const auto& r : records) {
    require(r.gold.has_value(), ErrorKind::Contract, "macro_f1 needs gold labels");
    require(r.predicted < k && *r.gold < k, ErrorKind::Contract, "label outside label space");
    if (r.predicted == *r.gold) {
      tp[r.predicted] += 1.0;
    } else {
      fp[r.predicted] += 1.0;
      fn[*r.gold] += 1.0;
    }
  }
  std::vector<double> f1(k, 0.0);
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const double precision = tp[c] + fp[c] > 0.0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    const double recall = tp[c] + fn[c] > 0.0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    if (precision + recall > 0.0) f1[c] = 2.0 * precision * recall / (precision + recall);
    sum += f1[c];
  }
  return {sum / static_cast<double>(k), std::move(f1)};
}

/// AUROC of confidence as a score for "prediction is correct" (Mann-Whitney
/// form, ties count one half). Throws when either outcome is absent.
inline double auroc_correctness(std::span<const PredictionRecord> records) {
  detail::require_records(records);
  std::vector<std::pair<double, bool>> scored;
  scored.reserve(records.size());
  std::size_t n_pos = 0;
  for (const auto& r : records) {
    scored.emplace_back(r.confidence, r.correct);
    n_pos += r.correct ? 1 : 0;
  }
  const std::size_t n_neg = records.size() - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorKind::Contract,
          "undefined AUROC: needs at least one correct and one incorrect prediction");
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Rank-sum over tie groups: each correct record wins against every incorrect
  // record strictly below and draws with incorrect records at the same score.
  double wins = 0.0;
  std::size_t neg_below = 0;
  for (std::size_t i = 0; i < scored.size();) {
    std::size_t j = i;
    std::size_t pos_here = 0, neg_here = 0;
    while (j < scored.size() && scored[j].first == scored[i].first) {
      (scored[j].second ? pos_here : neg_here) += 1;
      ++j;
    }
    wins += static_cast<double>(pos_here) *
            (static_cast<double>(neg_below) + 0.5 * static_cast<double>(neg_here));
    neg_below += neg_here;
    i = j;
  }
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline double mean_entropy_bits(std::span<const PredictionRecord> records) {
  detail::require_records(records);
  double s = 0.0;
  for (const auto& r : records) s += entropy_bits(r.probs);
  return s / static_cast<double>(records.size());
}

/// All metrics at once. If any record lacks a gold label the input is treated
/// as out-of-distribution and only mean entropy is reported.
inline MetricsReport compute_metrics(std::span<const PredictionRecord> records, std::size_t k,
                                     int ece_bins = kDefaultEceBins) {
  detail::require_records(records);
  MetricsReport rep;
  rep.n = records.size();
  rep.mean_entropy_bits = mean_entropy_bits(records);
  const bool has_gold = std::all_of(records.begin(), records.end(),
                                    [](const PredictionRecord& r) { return r.gold.has_value(); });
  if (!has_gold) return rep;
  rep.accuracy = accuracy(records);
  auto [macro, per_class] = macro_f1(records, k);
  rep.macro_f1 = macro;
  rep.per_class_f1 = std::move(per_class);
  rep.brier = brier(records);
  rep.ece = ece(records, ece_bins);
  const bool both = std::any_of(records.begin(), records.end(), [](auto& r) { return r.correct; }) &&
                    std::any_of(records.begin(), records.end(), [](auto& r) { return !r.correct; });
  if (both) rep.auroc = auroc_correctness(records);
  return rep;
}

}  // namespace abcuq
