#include <gtest/gtest.h>

#include <random>

#include "ctr/errors.hpp"
#include "ctr/tape.hpp"

using ctr::GradTape;
using ctr::Matrix;
using ctr::Parameter;

TEST(Tape, SquareGradient) {
  Parameter w("w", Matrix::scalar(3.0));
  GradTape tape;
  auto loss = ctr::ops::sum(tape, ctr::ops::square(tape, tape.leaf(w)));
  tape.backward(loss);
  EXPECT_EQ(w.grad[0], 6.0);
}

TEST(Tape, ConstantLossLeavesGradsZero) {
  Parameter w("w", Matrix{{1.0, 2.0}});
  Parameter unused("u", Matrix::scalar(4.0));
  GradTape tape;
  tape.leaf(w);
  auto c = tape.constant(Matrix{{5.0, 7.0}});
  auto loss = ctr::ops::sum(tape, c);
  tape.backward(loss);
  EXPECT_EQ(w.grad, Matrix(1, 2));
  EXPECT_EQ(unused.grad, Matrix(1, 1));
}

TEST(Tape, BackwardWithoutForwardIsUsageError) {
  GradTape tape;
  auto c = tape.constant(Matrix::scalar(1.0));
  EXPECT_THROW(tape.backward(c), ctr::UsageError);
}

TEST(Tape, NonScalarLossAndDoubleReplayRejected) {
  Parameter w("w", Matrix{{1.0, 2.0}});
  GradTape tape;
  auto y = ctr::ops::square(tape, tape.leaf(w));
  EXPECT_THROW(tape.backward(y), ctr::UsageError);
  auto loss = ctr::ops::sum(tape, y);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), ctr::UsageError);
}

TEST(Tape, ReadOnlyLeafNeedsNonRecordingTape) {
  const Parameter w("w", Matrix::scalar(1.0));
  GradTape recording;
  EXPECT_THROW(recording.leaf(w), ctr::UsageError);
  GradTape inference(false);
  EXPECT_EQ(inference.leaf(w)->value()[0], 1.0);
}

TEST(Tape, ReplaysInExactReverseOrder) {
  Parameter w("w", Matrix{{1.0, -2.0}, {0.5, 3.0}});
  GradTape tape;
  auto x = tape.leaf(w);
  auto a = ctr::ops::matmul(tape, x, x);
  auto b = ctr::ops::relu(tape, a);
  auto c = ctr::ops::square(tape, b);
  auto loss = ctr::ops::sum(tape, c);
  const std::size_t n = tape.size();
  std::vector<std::size_t> seen;
  tape.on_replay = [&](std::size_t i) { seen.push_back(i); };
  tape.backward(loss);
  ASSERT_EQ(seen.size(), n);
  for (std::size_t k = 0; k < n; ++k) EXPECT_EQ(seen[k], n - 1 - k);
}

TEST(Tape, GradientsOfComposedOps) {
  // loss = sum(relu(x W + b)); the gradient is easy to write out by hand.
  Parameter w("w", Matrix{{1.0, -1.0}, {2.0, 0.5}});
  Parameter b("b", Matrix{{0.0, -10.0}});
  GradTape tape;
  auto x = tape.constant(Matrix{{1.0, 1.0}, {2.0, -0.5}});
  auto h = ctr::ops::add_row(tape, ctr::ops::matmul(tape, x, tape.leaf(w)), tape.leaf(b));
  auto loss = ctr::ops::sum(tape, ctr::ops::relu(tape, h));
  tape.backward(loss);
  // Pre-activations are (3, -10.5) and (1, -12.25): only column 0 is active.
  EXPECT_EQ(w.grad, (Matrix{{3.0, 0.0}, {0.5, 0.0}}));
  EXPECT_EQ(b.grad, (Matrix{{2.0, 0.0}}));
}

TEST(Tape, ConcatAndReshapeRouteGradients) {
  Parameter a("a", Matrix{{1.0, 2.0}});
  Parameter b("b", Matrix{{3.0}});
  GradTape tape;
  auto cat = ctr::ops::hconcat(tape, {tape.leaf(a), tape.leaf(b)});
  auto col = ctr::ops::reshape(tape, cat, 3, 1);
  auto loss = ctr::ops::sum(tape, ctr::ops::square(tape, col));
  tape.backward(loss, 0.5);
  EXPECT_EQ(a.grad, (Matrix{{1.0, 2.0}}));
  EXPECT_EQ(b.grad, (Matrix{{3.0}}));
}

TEST(TapeProperty, RepeatedRunsGiveBitIdenticalGrads) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  Matrix init(3, 3);
  for (double& v : init.data()) v = n(rng);
  auto run = [&] {
    Parameter w("w", init);
    GradTape tape;
    auto x = tape.leaf(w);
    auto y = ctr::ops::relu(tape, ctr::ops::matmul(tape, x, ctr::ops::add(tape, x, x)));
    tape.backward(ctr::ops::sum(tape, ctr::ops::square(tape, y)));
    return w.grad;
  };
  EXPECT_EQ(run(), run());
}
