#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "exitsched/calibrator.hpp"
#include "exitsched/exitlog.hpp"
#include "exitsched/trainer.hpp"

namespace exitsched {

inline constexpr std::size_t kHistogramBins = 20;
using Histogram = std::array<std::size_t, kHistogramBins>;

/// Outcome of routing every sample of a log through a policy.
struct EvalReport {
  std::string policy;
  double budget = 0.0;
  double accuracy = 0.0;
  double avg_cost = 0.0;
  bool overshoot = false;  // avg_cost above 1.05 * budget
  std::vector<std::size_t> per_exit_counts;
  std::vector<std::size_t> per_exit_correct;
  std::vector<std::size_t> per_sample_exit;
  std::vector<double> per_sample_score;  // score at the exit taken
  std::vector<std::uint8_t> per_sample_correct;
  // Scores at every exit over all samples, split by whether that exit's prediction
  // is right. Bins cover [0, 1].
  std::vector<Histogram> score_hist_correct;
  std::vector<Histogram> score_hist_incorrect;
};

/// Routes every sample to the first exit whose score reaches its threshold.
EvalReport evaluate(const Policy& policy, const ExitLog& log);

/// Same walk for a precomputed [N][K] score matrix.
EvalReport evaluate_scores(std::span<const double> scores, std::span<const double> thresholds, const ExitLog& log,
                           std::string label, double budget);

/// Recomputes counts, accuracy and cost from per_sample_exit; throws std::logic_error
/// on disagreement.
void verify_report(const EvalReport& report, const ExitLog& log);

struct SweepConfig {
  std::vector<PolicyKind> kinds{PolicyKind::kEENet, PolicyKind::kMaxScore, PolicyKind::kEntropy,
                                PolicyKind::kVote};
  TrainConfig train;
  double alpha = 0.1;
  double beta = 1e-3;
};

/// For each budget: train eenet (when requested), calibrate every policy on
/// `val`, evaluate on `test`. Reports are ordered budget-major, then by kind.
std::vector<EvalReport> sweep(const ExitLog& val, const ExitLog& test, std::span<const double> budgets,
                              const SweepConfig& cfg);

/// Full EENet and the two single-component variants at one budget.
struct Ablation {
  EvalReport full;
  EvalReport without_scoring;       // learned quotas, max-score ranking
  EvalReport without_distribution;  // learned scores, geometric quotas
};

Ablation ablation_variants(const PolicyParams& params, const ExitLog& val, const ExitLog& test,
                           const BudgetSpec& budget);
Ablation ablation_variants(const ExitLog& val, const ExitLog& test, const BudgetSpec& budget,
                           const TrainConfig& cfg);

/// Flat CSV: budget, policy, accuracy, avg_cost, overshoot, counts, corrects, digest.
void write_reports_csv(std::span<const EvalReport> reports, const std::filesystem::path& file,
                       const std::string& config_digest);
void write_reports_json(std::span<const EvalReport> reports, const std::filesystem::path& file,
                        const std::string& config_digest);
/// Accuracy table with one row per budget and one column per policy.
void write_comparison_csv(std::span<const EvalReport> reports, const std::filesystem::path& file,
                          const std::string& config_digest);
/// Per-sample (index, exit, correct, score) rows.
void write_exit_trace(const EvalReport& report, const std::filesystem::path& file);

}  // namespace exitsched
