#include "exitsched/confidence.hpp"

#include <algorithm>

namespace exitsched {

std::vector<ConfidenceVec> confidence_profile(std::span<const float> sample, std::size_t n_exits,
                                              std::size_t n_classes) {
  if (n_classes < 2) throw Error(ErrorKind::kData, "confidence needs at least 2 classes");
  std::vector<ConfidenceVec> out(n_exits);
  std::vector<std::size_t> votes(n_classes, 0);
  std::size_t top_votes = 0;
  for (std::size_t k = 0; k < n_exits; ++k) {
    auto row = sample.subspan(k * n_classes, n_classes);
    const std::size_t pred = argmax(row);
    top_votes = std::max(top_votes, ++votes[pred]);
    out[k].max = static_cast<double>(row[pred]);
    out[k].entropy = normalized_entropy(row);
    out[k].vote = static_cast<double>(top_votes) / static_cast<double>(k + 1);
  }
  return out;
}

}  // namespace exitsched
