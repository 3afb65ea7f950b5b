#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "exitsched/exitlog.hpp"

namespace exitsched {

/// Knobs of the synthetic multi-exit log generator.
///
/// Each sample is "easy" with probability difficulty_mix (right from exit 1 on) or
/// "hard", in which case the first exit that gets it right is drawn so that the
/// expected accuracy at exit k equals per_exit_accuracy[k]. Once right, a sample
/// stays right at later exits.
struct SynthSpec {
  std::size_t n_samples = 2000;
  std::size_t n_exits = 3;
  std::size_t n_classes = 10;
  std::vector<double> per_exit_accuracy;  // empty: evenly spaced from 0.55 to 0.9
  double difficulty_mix = 0.3;
  double concentration = 8.0;
  std::vector<double> costs;  // empty: 1, 2, ..., K
  std::uint64_t seed = 0;
  std::string split_name = "synthetic";

  /// The 4-exit, 10-class benchmark with accuracies (0.55, 0.70, 0.80, 0.88) and
  /// costs (1, 2, 3, 4).
  static SynthSpec benchmark(std::size_t n_samples, std::uint64_t seed);

  /// Fills defaulted fields and checks feasibility. Throws Error(kUsage).
  SynthSpec resolved() const;
};

ExitLog generate(const SynthSpec& spec);

struct OracleResult {
  std::vector<double> thresholds;
  double accuracy = 0.0;
  double avg_cost = 0.0;
  std::size_t correct = 0;
};

/// Exhaustive search over per-exit threshold grids (N <= 64, K <= 3) for the
/// highest accuracy whose average cost stays within `budget`, routing with the same
/// first-exit-at-or-above-threshold rule as evaluate(). Grid for exit k: `grid_size`
/// evenly spaced order statistics of its scores starting at the minimum; when
/// grid_size covers every distinct score, all of them plus +inf.
OracleResult brute_force_best_thresholds(const ExitLog& log, std::span<const double> scores, double budget,
                                         std::size_t grid_size);

}  // namespace exitsched
