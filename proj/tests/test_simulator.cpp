#include <gtest/gtest.h>

#include <fstream>

#include "exitsched/simulator.hpp"
#include "exitsched/error.hpp"
#include "exitsched/synthgen.hpp"
#include "fixtures.hpp"

namespace exitsched {
namespace {

using testing::make_log;
using testing::random_log;

std::vector<float> row(bool right) { return right ? std::vector<float>{0.8f, 0.2f} : std::vector<float>{0.3f, 0.7f}; }

double exit_accuracy(const ExitLog& log, std::size_t k) {
  std::size_t right = 0;
  for (std::size_t n = 0; n < log.n_samples; ++n) right += argmax(log.probs(n, k)) == log.labels[n];
  return static_cast<double>(right) / static_cast<double>(log.n_samples);
}

TEST(Evaluate, AllLastExit) {
  const ExitLog log = random_log(50, 3, 4, 1);
  const auto scores = score_matrix(PolicyKind::kMaxScore, nullptr, log);
  const std::vector<double> t{kNever, kNever, kAlways};
  const auto r = evaluate_scores(scores, t, log, "last", 3.0);
  EXPECT_EQ(r.per_exit_counts, (std::vector<std::size_t>{0, 0, 50}));
  EXPECT_EQ(r.accuracy, exit_accuracy(log, 2));
  EXPECT_EQ(r.avg_cost, 3.0);
  verify_report(r, log);
}

TEST(Evaluate, AllFirstExit) {
  const ExitLog log = random_log(50, 3, 4, 1);
  const auto scores = score_matrix(PolicyKind::kEntropy, nullptr, log);
  const std::vector<double> t{kAlways, kAlways, kAlways};
  const auto r = evaluate_scores(scores, t, log, "first", 1.0);
  EXPECT_EQ(r.per_exit_counts[0], 50u);
  EXPECT_EQ(r.avg_cost, 1.0);
  EXPECT_EQ(r.accuracy, exit_accuracy(log, 0));
}

TEST(Evaluate, ThreeSampleWalk) {
  // Exit-1 right for samples 1 and 3, exit 2 right for sample 2.
  const ExitLog log = make_log({{row(true), row(false)}, {row(false), row(true)}, {row(true), row(false)}},
                               {0, 0, 0}, {1.0, 4.0});
  const std::vector<double> scores{0.9, 0.0, 0.4, 0.0, 0.7, 0.0};
  const std::vector<double> t{0.7, kAlways};
  const auto r = evaluate_scores(scores, t, log, "walk", 2.0);
  EXPECT_EQ(r.per_sample_exit, (std::vector<std::size_t>{0, 1, 0}));
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.avg_cost, (2 * 1.0 + 4.0) / 3.0);
  EXPECT_FALSE(r.overshoot);
  const auto tight = evaluate_scores(scores, t, log, "walk", 1.5);
  EXPECT_TRUE(tight.overshoot);
}

TEST(Evaluate, HistogramsCountEverySamplePerExit) {
  const ExitLog log = random_log(80, 3, 4, 9);
  const Policy policy = calibrate_baseline(PolicyKind::kMaxScore, log, {2.0});
  const auto r = evaluate(policy, log);
  for (std::size_t k = 0; k < 3; ++k) {
    std::size_t total = 0;
    for (std::size_t b = 0; b < kHistogramBins; ++b) total += r.score_hist_correct[k][b] + r.score_hist_incorrect[k][b];
    EXPECT_EQ(total, 80u);
  }
}

TEST(Evaluate, DimensionMismatchRejected) {
  const ExitLog log = random_log(10, 3, 4, 9);
  const ExitLog other = random_log(10, 2, 4, 9);
  const Policy policy = calibrate_baseline(PolicyKind::kMaxScore, other, {1.5});
  EXPECT_THROW(evaluate(policy, log), Error);
}

TEST(Evaluate, VerifyCatchesTampering) {
  const ExitLog log = random_log(30, 2, 3, 2);
  const Policy policy = calibrate_baseline(PolicyKind::kMaxScore, log, {1.5});
  auto r = evaluate(policy, log);
  EXPECT_NO_THROW(verify_report(r, log));
  r.per_exit_counts[0] += 1;
  EXPECT_THROW(verify_report(r, log), std::logic_error);
}

SweepConfig quick_sweep() {
  SweepConfig cfg;
  cfg.train.learning_rate = 1e-3;
  cfg.train.max_epochs = 5;
  cfg.train.seed = 3;
  return cfg;
}

// Endpoint budgets pin the geometric quota to a single exit. EENet's quota is the
// learned mean assignment, which only approaches the endpoints, so it is left out.
SweepConfig baselines_only() {
  SweepConfig cfg = quick_sweep();
  cfg.kinds = {PolicyKind::kMaxScore, PolicyKind::kEntropy, PolicyKind::kVote};
  return cfg;
}

TEST(Sweep, FullBudgetMatchesFullModel) {
  const ExitLog val = generate(SynthSpec{.n_samples = 400, .seed = 1});
  const ExitLog test = generate(SynthSpec{.n_samples = 400, .seed = 2});
  const std::vector<double> budgets{3.0};
  for (const auto& r : sweep(val, test, budgets, baselines_only())) {
    EXPECT_EQ(r.accuracy, exit_accuracy(test, 2)) << r.policy;
  }
}

TEST(Sweep, FirstExitBudgetMatchesFirstExit) {
  const ExitLog val = generate(SynthSpec{.n_samples = 400, .seed = 1});
  const ExitLog test = generate(SynthSpec{.n_samples = 400, .seed = 2});
  const std::vector<double> budgets{1.0};
  for (const auto& r : sweep(val, test, budgets, baselines_only())) {
    // Thresholds fitted on val may let a few test samples fall through.
    EXPECT_GE(r.per_exit_counts[0], 395u) << r.policy;
    if (r.per_exit_counts[0] == 400) EXPECT_EQ(r.accuracy, exit_accuracy(test, 0)) << r.policy;
  }
}

TEST(Sweep, AccuracyRisesWithBudget) {
  const ExitLog val = generate(SynthSpec::benchmark(4000, 1));
  const ExitLog test = generate(SynthSpec::benchmark(4000, 2));
  const std::vector<double> budgets{1.5, 2.0, 2.5, 3.0, 3.5};
  SweepConfig cfg = quick_sweep();
  cfg.kinds = {PolicyKind::kMaxScore, PolicyKind::kEntropy};
  const auto reports = sweep(val, test, budgets, cfg);
  for (std::size_t i = 2; i < reports.size(); ++i) {
    EXPECT_GE(reports[i].accuracy, reports[i - 2].accuracy) << reports[i].policy << " B=" << reports[i].budget;
  }
}

TEST(Ablation, IdenticalQuotasReproduceFullPolicy) {
  const ExitLog val = generate(SynthSpec{.n_samples = 500, .seed = 1});
  const auto params = PolicyParams::initialize(3, 10, 0.5, 1);
  const Policy full = calibrate_eenet(params, val, {2.0});
  const Policy same = calibrate_with_quota(PolicyKind::kEENet, &params, val, full.quota, 2.0);
  EXPECT_EQ(full.thresholds, same.thresholds);
  const Policy baseline = calibrate_baseline(PolicyKind::kMaxScore, val, {2.0});
  const Policy variant = calibrate_with_quota(PolicyKind::kMaxScore, nullptr, val, baseline.quota, 2.0);
  EXPECT_EQ(baseline.thresholds, variant.thresholds);
}

TEST(Ablation, VariantsAreLabelledAndConsistent) {
  const ExitLog val = generate(SynthSpec{.n_samples = 500, .seed = 1});
  const ExitLog test = generate(SynthSpec{.n_samples = 500, .seed = 2});
  const auto params = PolicyParams::initialize(3, 10, 0.5, 1);
  const auto a = ablation_variants(params, val, test, {2.0});
  EXPECT_EQ(a.full.policy, "eenet");
  EXPECT_EQ(a.without_scoring.policy, "eenet_without_scoring");
  EXPECT_EQ(a.without_distribution.policy, "eenet_without_distribution");
  for (const auto* r : {&a.full, &a.without_scoring, &a.without_distribution}) verify_report(*r, test);
}

TEST(Reports, CsvHasOneRowPerReport) {
  testing::TempDir dir("reports");
  const ExitLog log = random_log(30, 2, 3, 2);
  std::vector<EvalReport> reports;
  for (double b : {1.2, 1.8}) reports.push_back(evaluate(calibrate_baseline(PolicyKind::kVote, log, {b}), log));
  write_reports_csv(reports, dir.path() / "r.csv", "d");
  write_comparison_csv(reports, dir.path() / "c.csv", "d");
  std::ifstream in(dir.path() / "r.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 3u);
  std::ifstream cin(dir.path() / "c.csv");
  std::getline(cin, line);
  EXPECT_EQ(line, "budget,vote,config_digest");
}

}  // namespace
}  // namespace exitsched
