#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "exitsched/exitlog.hpp"

namespace exitsched::testing {

/// Log from explicit rows: probs[n][k] is a C-vector.
inline ExitLog make_log(const std::vector<std::vector<std::vector<float>>>& probs, std::vector<std::uint32_t> labels,
                        std::vector<double> costs) {
  ExitLog log;
  log.n_samples = probs.size();
  log.n_exits = probs.empty() ? costs.size() : probs[0].size();
  log.n_classes = probs.empty() ? 2 : probs[0][0].size();
  for (const auto& sample : probs) {
    for (const auto& row : sample) log.scores.insert(log.scores.end(), row.begin(), row.end());
  }
  log.labels = std::move(labels);
  log.costs = std::move(costs);
  log.split_name = "fixture";
  return log;
}

/// Random softmax rows with costs 1..K.
inline ExitLog random_log(std::size_t N, std::size_t K, std::size_t C, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.5);
  ExitLog log;
  log.n_samples = N;
  log.n_exits = K;
  log.n_classes = C;
  log.split_name = "random";
  for (std::size_t n = 0; n < N * K; ++n) {
    std::vector<double> e(C);
    double s = 0.0;
    for (double& v : e) s += v = std::exp(z(rng));
    for (double v : e) log.scores.push_back(static_cast<float>(v / s));
  }
  for (std::size_t n = 0; n < N; ++n) log.labels.push_back(static_cast<std::uint32_t>(rng() % C));
  for (std::size_t k = 0; k < K; ++k) log.costs.push_back(static_cast<double>(k + 1));
  return log;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("exitsched_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace exitsched::testing
