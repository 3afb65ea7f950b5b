#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "exitsched/confidence.hpp"
#include "exitsched/exitlog.hpp"
#include "exitsched/policy_net.hpp"

namespace exitsched {

enum class PolicyKind { kEENet, kMaxScore, kEntropy, kVote };

const char* to_string(PolicyKind kind);
/// Accepts "eenet", "max_score", "entropy", "vote". Throws Error(kUsage) otherwise.
PolicyKind parse_policy_kind(const std::string& name);

inline constexpr double kNever = std::numeric_limits<double>::infinity();
inline constexpr double kAlways = -std::numeric_limits<double>::infinity();
/// File representation of the +/- infinity thresholds.
inline constexpr double kThresholdSentinel = 1e8;

/// A scoring rule plus per-exit thresholds. A sample leaves at the first exit whose
/// score is >= its threshold; thresholds.back() is always -inf.
struct Policy {
  PolicyKind kind = PolicyKind::kMaxScore;
  std::optional<PolicyParams> params;  // eenet only
  std::vector<double> thresholds;
  std::vector<double> quota;  // exit distribution the thresholds were fitted to
  double budget = 0.0;
  std::string checkpoint;          // checkpoint stem, relative to the policy file
  std::string calibration_digest;  // log_digest of the calibration split
  std::string config_digest;
};

/// [N][K] exit scores of `log` under a scoring rule: q_hat for eenet, otherwise the
/// matching confidence measure.
std::vector<double> score_matrix(PolicyKind kind, const PolicyParams* params, const ExitLog& log);

struct QuotaFill {
  std::vector<double> thresholds;        // [K]
  std::vector<std::size_t> marked_exit;  // [N], exit each sample was assigned to
  std::vector<std::size_t> marked;       // [K], samples assigned per exit
};

/// Assigns samples to exits in order: at each exit k < K the highest-scoring
/// unassigned samples are taken until round(N * quota[k]) are marked (ties by lower
/// index); the threshold is the lowest marked score, +inf when nothing is marked.
/// Quotas beyond the remaining samples are capped; the rest go to the last exit.
QuotaFill fill_quotas(std::span<const double> scores, std::size_t n_samples, std::size_t n_exits,
                      std::span<const double> quota);

/// Quota proportional to rho^(k-1) whose expected cost equals the budget.
std::vector<double> geometric_quota(std::span<const double> costs, double budget);

/// Learned exit distribution p_k = mean over samples of r_hat_k, with q_hat ranking.
Policy calibrate_eenet(const PolicyParams& params, const ExitLog& log, const BudgetSpec& budget);

/// max_score / entropy / vote scores with geometric quotas.
Policy calibrate_baseline(PolicyKind kind, const ExitLog& log, const BudgetSpec& budget);

/// Thresholds for an arbitrary scoring rule and quota (used by the ablations).
Policy calibrate_with_quota(PolicyKind kind, const PolicyParams* params, const ExitLog& log,
                            std::span<const double> quota, double budget);

/// Mean r_hat over the log.
std::vector<double> learned_quota(const PolicyParams& params, const ExitLog& log);

/// Policy JSON; for eenet the checkpoint is written next to it as `<stem>.bin/.json`
/// when `write_checkpoint` is set.
void save_policy(const Policy& policy, const std::filesystem::path& file, bool write_checkpoint = true);
Policy load_policy(const std::filesystem::path& file);

}  // namespace exitsched
