#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace exitsched {

/// 64-bit FNV-1a, used for content digests embedded in artifacts.
class Fnv1a {
 public:
  void update(const void* data, std::size_t len);
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
  void update_span(std::span<const T> values) {
    update(values.data(), values.size_bytes());
  }
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Worker count: EXITSCHED_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(chunk) for chunk in [0, n_chunks) across worker threads. Callers write
/// into per-chunk slots and reduce in chunk order, so results do not depend on the
/// number of workers.
void parallel_chunks(std::size_t n_chunks, const std::function<void(std::size_t)>& fn);

}  // namespace exitsched
