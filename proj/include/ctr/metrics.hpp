#pragma once

#include <span>

namespace ctr {

// Rank-sum AUC. Tied scores share the average of their ranks, which makes the
// result equal to P(score_pos > score_neg) + 0.5 * P(tie).
// MetricError unless both classes are present and lengths agree.
double auc(std::span<const double> scores, std::span<const double> labels);

// (concordant + 0.5 * tied) / (M * N) by enumerating every pair.
double auc_oracle(std::span<const double> scores, std::span<const double> labels);

inline constexpr double kLoglossClamp = 1e-7;

// Mean binary cross-entropy (natural log); probabilities are clamped into
// [1e-7, 1 - 1e-7]. MetricError on empty input.
double logloss(std::span<const double> probs, std::span<const double> labels);

}  // namespace ctr
