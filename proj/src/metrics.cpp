#include "ctr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "ctr/errors.hpp"

namespace ctr {

namespace {

void check_lengths(std::span<const double> a, std::span<const double> labels) {
  if (a.size() != labels.size()) {
    throw MetricError("scores and labels differ in length (" + std::to_string(a.size()) + " vs " +
                      std::to_string(labels.size()) + ")");
  }
}

std::pair<std::size_t, std::size_t> count_classes(std::span<const double> labels) {
  std::size_t pos = 0;
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw MetricError("labels must be 0 or 1");
    if (y == 1.0) ++pos;
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) {
    throw MetricError("AUC needs at least one positive and one negative (got " + std::to_string(pos) +
                      " positives, " + std::to_string(neg) + " negatives)");
  }
  return {pos, neg};
}

}  // namespace

double auc(std::span<const double> scores, std::span<const double> labels) {
  check_lengths(scores, labels);
  const auto [m, n] = count_classes(labels);

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Ranks are 1-based; a tie group spanning positions [i, j) gets (i+1+j)/2.
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1.0) pos_rank_sum += avg_rank;
    i = j;
  }
  const double md = static_cast<double>(m);
  const double nd = static_cast<double>(n);
  return (pos_rank_sum - md * (md + 1.0) / 2.0) / (md * nd);
}

double auc_oracle(std::span<const double> scores, std::span<const double> labels) {
  check_lengths(scores, labels);
  const auto [m, n] = count_classes(labels);
  double wins = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1.0) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0.0) continue;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / (static_cast<double>(m) * static_cast<double>(n));
}

double logloss(std::span<const double> probs, std::span<const double> labels) {
  check_lengths(probs, labels);
  if (probs.empty()) throw MetricError("logloss of an empty set");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kLoglossClamp, 1.0 - kLoglossClamp);
    total -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  return total / static_cast<double>(probs.size());
}

}  // namespace ctr
