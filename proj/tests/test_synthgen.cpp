#include <gtest/gtest.h>

#include "exitsched/calibrator.hpp"
#include "exitsched/simulator.hpp"
#include "exitsched/error.hpp"
#include "exitsched/synthgen.hpp"
#include "fixtures.hpp"

namespace exitsched {
namespace {

using testing::make_log;

double exit_accuracy(const ExitLog& log, std::size_t k) {
  std::size_t right = 0;
  for (std::size_t n = 0; n < log.n_samples; ++n) right += argmax(log.probs(n, k)) == log.labels[n];
  return static_cast<double>(right) / static_cast<double>(log.n_samples);
}

TEST(Synth, PerExitAccuracyWithinTolerance) {
  SynthSpec spec;
  spec.n_samples = 10000;
  spec.per_exit_accuracy = {0.6, 0.8, 0.9};
  spec.seed = 21;
  const ExitLog log = generate(spec);
  EXPECT_NO_THROW(log.validate());
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(exit_accuracy(log, k), spec.per_exit_accuracy[k], 0.02);
}

TEST(Synth, BenchmarkProfile) {
  const ExitLog log = generate(SynthSpec::benchmark(20000, 1));
  EXPECT_EQ(log.n_exits, 4u);
  EXPECT_EQ(log.costs, (std::vector<double>{1, 2, 3, 4}));
  const double expect[] = {0.55, 0.70, 0.80, 0.88};
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(exit_accuracy(log, k), expect[k], 0.02);
}

TEST(Synth, AllEasyMeansFirstExitSuffices) {
  SynthSpec spec;
  spec.n_samples = 500;
  spec.difficulty_mix = 1.0;
  spec.per_exit_accuracy = {1.0, 1.0, 1.0};
  const ExitLog log = generate(spec);
  EXPECT_EQ(exit_accuracy(log, 0), 1.0);
  const Policy p = calibrate_baseline(PolicyKind::kMaxScore, log, {1.0});
  const auto r = evaluate(p, log);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.avg_cost, 1.0);
}

TEST(Synth, Deterministic) {
  SynthSpec spec;
  spec.n_samples = 300;
  spec.seed = 4;
  EXPECT_EQ(generate(spec), generate(spec));
  SynthSpec other = spec;
  other.seed = 5;
  EXPECT_NE(generate(spec).scores, generate(other).scores);
}

TEST(Synth, OnceRightStaysRight) {
  SynthSpec spec;
  spec.n_samples = 2000;
  spec.seed = 8;
  const ExitLog log = generate(spec);
  for (std::size_t n = 0; n < log.n_samples; ++n) {
    bool seen = false;
    for (std::size_t k = 0; k < log.n_exits; ++k) {
      const bool right = argmax(log.probs(n, k)) == log.labels[n];
      if (seen) EXPECT_TRUE(right) << "sample " << n;
      seen = seen || right;
    }
  }
}

TEST(Synth, RejectsBadSpecs) {
  SynthSpec spec;
  spec.per_exit_accuracy = {0.9, 0.6, 0.95};
  EXPECT_THROW(generate(spec), Error);
  spec = SynthSpec{};
  spec.costs = {1, 1, 2};
  EXPECT_THROW(generate(spec), Error);
  spec = SynthSpec{};
  spec.n_classes = 1;
  EXPECT_THROW(generate(spec), Error);
}

TEST(Oracle, PerfectSeparationReachedByCalibration) {
  // Exit-1 scores separate right (high) from wrong (low) samples; exit 2 always right.
  std::vector<std::vector<std::vector<float>>> rows;
  std::vector<std::uint32_t> labels;
  for (int n = 0; n < 20; ++n) {
    const bool right = n % 2 == 0;
    rows.push_back({right ? std::vector<float>{0.9f - 0.01f * n, 0.1f + 0.01f * n}
                          : std::vector<float>{0.45f - 0.001f * n, 0.55f + 0.001f * n},
                    {0.95f, 0.05f}});
    labels.push_back(0);
  }
  const ExitLog log = make_log(rows, labels, {1.0, 2.0});
  const auto scores = score_matrix(PolicyKind::kMaxScore, nullptr, log);
  // Budget 1.5: ten samples may go on; exactly the ten wrong ones should.
  const auto oracle = brute_force_best_thresholds(log, scores, 1.5, 64);
  EXPECT_EQ(oracle.accuracy, 1.0);
  const std::vector<double> quota{0.5, 0.5};
  const Policy calibrated = calibrate_with_quota(PolicyKind::kMaxScore, nullptr, log, quota, 1.5);
  const auto r = evaluate(calibrated, log);
  EXPECT_EQ(r.accuracy, oracle.accuracy);
  EXPECT_EQ(r.avg_cost, 1.5);
}

TEST(Oracle, FullBudgetGivesFullModelAccuracy) {
  SynthSpec spec;
  spec.n_samples = 40;
  spec.seed = 2;
  const ExitLog log = generate(spec);
  const auto scores = score_matrix(PolicyKind::kMaxScore, nullptr, log);
  const auto oracle = brute_force_best_thresholds(log, scores, 3.0, 64);
  // Never worse than sending everything to the last exit.
  EXPECT_GE(oracle.accuracy, exit_accuracy(log, 2));
  EXPECT_LE(oracle.avg_cost, 3.0);
}

TEST(Oracle, SingleGridPoint) {
  SynthSpec spec;
  spec.n_samples = 30;
  const ExitLog log = generate(spec);
  const auto scores = score_matrix(PolicyKind::kMaxScore, nullptr, log);
  const auto oracle = brute_force_best_thresholds(log, scores, 3.0, 1);
  double lowest = 2.0;
  for (std::size_t n = 0; n < 30; ++n) lowest = std::min(lowest, scores[n * 3]);
  // The only candidate per exit is the lowest score: everything exits at exit 1.
  EXPECT_EQ(oracle.thresholds[0], lowest);
  EXPECT_EQ(oracle.avg_cost, 1.0);
}

TEST(Oracle, Limits) {
  SynthSpec spec;
  spec.n_samples = 65;
  const ExitLog big = generate(spec);
  const auto scores = score_matrix(PolicyKind::kMaxScore, nullptr, big);
  EXPECT_THROW(brute_force_best_thresholds(big, scores, 2.0, 8), Error);
}

}  // namespace
}  // namespace exitsched
