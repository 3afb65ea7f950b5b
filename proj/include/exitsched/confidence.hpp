#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "exitsched/error.hpp"

namespace exitsched {

/// Max-score, normalized-entropy and vote confidences of one exit.
struct ConfidenceVec {
  double max = 0.0;
  double entropy = 0.0;
  double vote = 0.0;

  bool operator==(const ConfidenceVec&) const = default;
};

/// Lower bound applied to probabilities inside log().
inline constexpr double kProbFloor = 1e-12;

/// Index of the largest entry; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

/// 1 + sum p log p / log C, with 0 log 0 = 0.
template <typename T>
double normalized_entropy(std::span<const T> probs) {
  double acc = 0.0;
  for (T p : probs) {
    const double v = static_cast<double>(p);
    if (v > 0.0) acc += v * std::log(std::max(v, kProbFloor));
  }
  return 1.0 + acc / std::log(static_cast<double>(probs.size()));
}

/// Confidence at exit k from the prediction history of exits 1..k.
///
/// `history` holds k probability vectors of length `n_classes` back to back; the
/// last one is the current exit.
template <typename T>
ConfidenceVec confidence_at_exit(std::span<const T> history, std::size_t n_classes) {
  if (n_classes < 2) throw Error(ErrorKind::kData, "confidence needs at least 2 classes");
  if (history.empty() || history.size() % n_classes != 0) {
    throw Error(ErrorKind::kData, "history length is not a positive multiple of n_classes");
  }
  const std::size_t k = history.size() / n_classes;
  std::vector<std::size_t> votes(n_classes, 0);
  for (std::size_t j = 0; j < k; ++j) {
    auto row = history.subspan(j * n_classes, n_classes);
    double sum = 0.0;
    for (T p : row) sum += static_cast<double>(p);
    if (std::abs(sum - 1.0) > 1e-4) {
      throw Error(ErrorKind::kData, "probability vector " + std::to_string(j) + " does not sum to 1");
    }
    ++votes[argmax(row)];
  }
  auto current = history.subspan((k - 1) * n_classes, n_classes);
  ConfidenceVec out;
  out.max = static_cast<double>(current[argmax(current)]);
  out.entropy = normalized_entropy(current);
  std::size_t top = 0;
  for (std::size_t v : votes) top = std::max(top, v);
  out.vote = static_cast<double>(top) / static_cast<double>(k);
  return out;
}

/// Confidence vectors for every exit of one sample ([K][C] row-major), computed
/// incrementally.
std::vector<ConfidenceVec> confidence_profile(std::span<const float> sample, std::size_t n_exits,
                                              std::size_t n_classes);

enum class ConfidenceKind { kMax, kEntropy, kVote };

inline double select(const ConfidenceVec& a, ConfidenceKind kind) {
  switch (kind) {
    case ConfidenceKind::kMax: return a.max;
    case ConfidenceKind::kEntropy: return a.entropy;
    case ConfidenceKind::kVote: return a.vote;
  }
  return a.max;
}

}  // namespace exitsched
