#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace exitsched {

/// Per-exit prediction log of a multi-exit classifier on one data split.
///
/// `scores` holds post-softmax probabilities in row-major [N][K][C] order and is
/// kept in single precision so that a save/load cycle is bit-exact. `costs[k]` is
/// the cumulative per-sample cost of running the network through exit k.
struct ExitLog {
  std::size_t n_samples = 0;
  std::size_t n_exits = 0;
  std::size_t n_classes = 0;
  std::vector<float> scores;
  std::vector<std::uint32_t> labels;
  std::vector<double> costs;
  std::string split_name;

  std::span<const float> probs(std::size_t n, std::size_t k) const {
    return {scores.data() + (n * n_exits + k) * n_classes, n_classes};
  }
  /// All K probability rows of one sample, contiguous.
  std::span<const float> sample(std::size_t n) const {
    return {scores.data() + n * n_exits * n_classes, n_exits * n_classes};
  }

  /// Throws Error(kData) on the first violated invariant.
  void validate() const;

  bool operator==(const ExitLog&) const = default;
};

/// Average per-sample budget in the units of ExitLog::costs, plus the loss weights
/// of the assignment head.
struct BudgetSpec {
  double budget = 0.0;
  double alpha = 0.1;
  double beta = 1e-3;
};

/// Throws Error(kInfeasible) when budget is outside [costs.front(), costs.back()].
void check_budget(const BudgetSpec& budget, std::span<const double> costs);

constexpr int kLogFormatVersion = 1;

/// Reads a log directory: manifest.json plus either scores.f32/labels.u32 or log.jsonl.
ExitLog load_log(const std::filesystem::path& dir);

/// Writes manifest.json, scores.f32 and labels.u32. Creates `dir` if needed. A
/// non-empty config_digest is recorded in the manifest for provenance.
void save_log(const ExitLog& log, const std::filesystem::path& dir, const std::string& config_digest = {});

/// Writes the small-scale text variant (manifest.json + log.jsonl).
void save_log_jsonl(const ExitLog& log, const std::filesystem::path& dir, const std::string& config_digest = {});

/// Shuffled disjoint partition with sizes ceil(fraction*N) and the remainder.
std::pair<ExitLog, ExitLog> split_log(const ExitLog& log, double fraction, std::uint64_t seed);

/// Rows of `log` at `indices`, in that order.
ExitLog subset(const ExitLog& log, std::span<const std::size_t> indices);

/// Stable content digest (hex) over dims, costs, scores and labels.
std::string log_digest(const ExitLog& log);

}  // namespace exitsched
