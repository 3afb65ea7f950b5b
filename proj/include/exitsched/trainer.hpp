#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "exitsched/exitlog.hpp"
#include "exitsched/policy_net.hpp"

namespace exitsched {

/// Correctness targets q and assignment targets r for every (sample, exit).
///
/// Each row of r is 1/m at its m assigned exits: the exits whose prediction is
/// correct, or every exit when none is. The rational form is kept alongside the
/// doubles so row sums can be checked exactly.
struct TargetSet {
  std::size_t n_samples = 0;
  std::size_t n_exits = 0;
  std::vector<std::uint8_t> q;               // [N][K], 0 or 1
  std::vector<std::uint8_t> assigned;        // [N][K], numerator of r over r_denominator
  std::vector<std::uint32_t> r_denominator;  // [N]
  std::vector<double> r;                     // [N][K]

  double r_at(std::size_t n, std::size_t k) const { return r[n * n_exits + k]; }
  bool q_at(std::size_t n, std::size_t k) const { return q[n * n_exits + k] != 0; }
};

TargetSet build_targets(const ExitLog& log);

/// w[n][k] = survival mass of sample n before exit k, normalized over samples.
/// Columns whose total survival mass is zero fall back to 1/N.
std::vector<double> survival_weights(std::span<const double> r_hat, std::size_t n_samples, std::size_t n_exits);

struct LossOptions {
  /// Use the literal q log q_hat + (1-q) log(1-q_hat) without negation.
  bool paper_sign = false;
  /// Treat q_hat values fed forward to later exits as constants in backward.
  bool detach_history = false;
  /// Coefficient of the 0.5 * l2 * |theta|^2 penalty.
  double l2_weight = 0.0;
  /// Survival weights to use instead of recomputing them from the batch ([batch][K]).
  std::span<const double> frozen_weights;
};

struct LossBreakdown {
  double utility = 0.0;     // L_g
  double budget = 0.0;      // L_budget
  double assignment = 0.0;  // L_CE
  double objective = 0.0;   // L_g + alpha L_budget + beta L_CE
  double penalty = 0.0;     // L2 term
  double total() const { return objective + penalty; }
};

/// Loss over `batch` (indices into log/targets). When `grad` is non-empty the exact
/// gradient is accumulated into it (layout of params.weights()).
LossBreakdown loss(const PolicyParams& params, const ExitLog& log, std::span<const std::size_t> batch,
                   const TargetSet& targets, const BudgetSpec& budget, const LossOptions& opts,
                   std::span<double> grad = {});

/// Optimizer and schedule settings. The loss weights alpha/beta come from BudgetSpec.
struct TrainConfig {
  double learning_rate = 3e-5;
  double l2_weight = 0.01;
  std::size_t max_epochs = 1000;
  std::size_t patience_epochs = 50;
  std::size_t batch_size = 128;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
  double hidden_ratio = 0.5;
  bool paper_sign = false;
  bool detach_history = false;

  void validate() const;
};

/// Settings used for image-classifier logs: lr 3e-5, D_h = 0.5 D, alpha 0.1, beta 1e-3.
TrainConfig image_preset();
BudgetSpec image_budget(double budget);
/// Settings used for text-classifier logs: lr 1e-4, D_h = 2 D, alpha 1e-2, beta 1e-4.
TrainConfig text_preset();
BudgetSpec text_budget(double budget);

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown train;
  double holdout_total = 0.0;
};

struct TrainResult {
  PolicyParams params;  // best-holdout snapshot
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

TrainResult train(const ExitLog& log, const BudgetSpec& budget, const TrainConfig& cfg);

/// One JSON object per epoch: {epoch, L_g, L_budget, L_CE, total, holdout_total}.
void write_train_log(std::span<const EpochRecord> history, const std::filesystem::path& file,
                     const std::string& config_digest = {});

}  // namespace exitsched
