#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ctr/errors.hpp"
#include "ctr/metrics.hpp"

using V = std::vector<double>;

TEST(Auc, Examples) {
  EXPECT_EQ(ctr::auc(V{0.9, 0.8, 0.2, 0.1}, V{1, 1, 0, 0}), 1.0);
  EXPECT_EQ(ctr::auc(V{0.3, 0.3, 0.3, 0.3}, V{1, 0, 1, 0}), 0.5);
  EXPECT_EQ(ctr::auc(V{0.9, 0.8, 0.7, 0.6}, V{1, 0, 1, 0}), 0.75);
  EXPECT_EQ(ctr::auc_oracle(V{0.9, 0.8, 0.2, 0.1}, V{1, 1, 0, 0}), 1.0);
  EXPECT_EQ(ctr::auc_oracle(V{0.3, 0.3, 0.3, 0.3}, V{1, 0, 1, 0}), 0.5);
  EXPECT_EQ(ctr::auc_oracle(V{0.9, 0.8, 0.7, 0.6}, V{1, 0, 1, 0}), 0.75);
}

TEST(Auc, SingleClassAndLengthMismatchAreErrors) {
  EXPECT_THROW(ctr::auc(V{0.1, 0.2}, V{1, 1}), ctr::MetricError);
  EXPECT_THROW(ctr::auc(V{0.1, 0.2}, V{0, 0}), ctr::MetricError);
  EXPECT_THROW(ctr::auc(V{0.1}, V{0, 1}), ctr::MetricError);
  EXPECT_THROW(ctr::auc_oracle(V{0.1, 0.2}, V{1, 1}), ctr::MetricError);
}

TEST(AucProperty, EqualsPairwiseOracle) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 99;
    const bool ties = trial % 2 == 0;
    V scores(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = ties ? static_cast<double>(rng() % 5) : std::ldexp(static_cast<double>(rng() >> 11), -53);
      labels[i] = static_cast<double>(rng() % 2);
    }
    labels[0] = 1;
    labels[1] = 0;
    EXPECT_EQ(ctr::auc(scores, labels), ctr::auc_oracle(scores, labels));
  }
}

TEST(AucProperty, InvariantUnderIncreasingTransform) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 200; ++trial) {
    V scores(50), mapped(50), labels(50);
    for (std::size_t i = 0; i < 50; ++i) {
      scores[i] = std::round(n(rng) * 4.0) / 4.0;
      mapped[i] = std::exp(scores[i]) * 3.0 - 7.0;
      labels[i] = static_cast<double>(rng() % 2);
    }
    labels[0] = 1;
    labels[1] = 0;
    EXPECT_EQ(ctr::auc(scores, labels), ctr::auc(mapped, labels));
  }
}

TEST(AucProperty, LabelFlipWithNegatedScores) {
  std::mt19937_64 rng(43);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 200; ++trial) {
    V scores(40), neg(40), labels(40), flipped(40);
    for (std::size_t i = 0; i < 40; ++i) {
      scores[i] = std::round(n(rng) * 3.0);
      neg[i] = -scores[i];
      labels[i] = static_cast<double>(rng() % 2);
    }
    labels[0] = 1;
    labels[1] = 0;
    for (std::size_t i = 0; i < 40; ++i) flipped[i] = 1.0 - labels[i];
    EXPECT_DOUBLE_EQ(ctr::auc(scores, labels), ctr::auc(neg, flipped));
  }
}

TEST(Logloss, Examples) {
  EXPECT_LT(ctr::logloss(V{1.0}, V{1}), 2e-7);
  EXPECT_GT(ctr::logloss(V{1.0}, V{1}), 0.0);
  EXPECT_NEAR(ctr::logloss(V{0.5, 0.5, 0.5}, V{1, 0, 0}), std::log(2.0), 1e-15);
  EXPECT_NEAR(ctr::logloss(V{0.8, 0.4}, V{1, 0}), -(std::log(0.8) + std::log(0.6)) / 2.0, 1e-15);
  EXPECT_NEAR(ctr::logloss(V{0.8, 0.4}, V{1, 0}), 0.366985, 1e-6);
  EXPECT_TRUE(std::isfinite(ctr::logloss(V{0.0}, V{1})));
}

TEST(Logloss, EmptyIsError) { EXPECT_THROW(ctr::logloss(V{}, V{}), ctr::MetricError); }

TEST(LoglossProperty, ConstantPredictorMinimisedAtBaseRate) {
  for (double rate : {0.1, 0.256, 0.5, 0.83}) {
    V labels(1000);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i < rate * 1000 ? 1.0 : 0.0;
    double best_p = 0.0, best = INFINITY;
    for (int g = 1; g < 1000; ++g) {
      const double p = g / 1000.0;
      const double l = ctr::logloss(V(labels.size(), p), labels);
      if (l < best) {
        best = l;
        best_p = p;
      }
    }
    EXPECT_NEAR(best_p, std::round(rate * 1000) / 1000.0, 1e-9) << rate;
  }
}
