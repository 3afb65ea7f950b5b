#include "exitsched/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "exitsched/confidence.hpp"
#include "exitsched/error.hpp"
#include "exitsched/util.hpp"

namespace exitsched {

namespace {

// Shape of the generated score vectors.
constexpr double kAttractorFraction = 0.2;  // share of classes that soak up most errors
constexpr double kAttractorPull = 0.7;      // P(wrong prediction lands on an attractor)
constexpr double kStickyWrong = 0.6;        // P(a wrong exit repeats the previous wrong class)
constexpr double kHardSharpness = 0.6;      // correct-class sharpness of hard samples vs easy
constexpr double kWrongTopShare = 0.7;      // Dirichlet weight of a wrong top class
constexpr double kWrongTrueShare = 0.35;    // Dirichlet weight of the true class when wrong

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

/// Dirichlet draw; `top` is then moved to rank 0 and, if given, `second` to rank 1.
std::vector<double> dirichlet_row(Rng& rng, std::span<const double> alpha, std::size_t top,
                                  std::size_t second = std::numeric_limits<std::size_t>::max()) {
  const std::size_t C = alpha.size();
  std::vector<double> p(C);
  double sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    std::gamma_distribution<double> g(alpha[c], 1.0);
    p[c] = std::max(g(rng), 1e-300);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  const std::size_t hi = argmax(std::span<const double>(p));
  std::swap(p[hi], p[top]);
  if (second < C) {
    std::size_t runner = second;
    for (std::size_t c = 0; c < C; ++c) {
      if (c != top && p[c] > p[runner]) runner = c;
    }
    std::swap(p[runner], p[second]);
  }
  return p;
}

}  // namespace

SynthSpec SynthSpec::benchmark(std::size_t n_samples, std::uint64_t seed) {
  SynthSpec s;
  s.n_samples = n_samples;
  s.n_exits = 4;
  s.n_classes = 10;
  s.per_exit_accuracy = {0.55, 0.70, 0.80, 0.88};
  s.costs = {1.0, 2.0, 3.0, 4.0};
  s.seed = seed;
  s.split_name = "benchmark";
  return s;
}

SynthSpec SynthSpec::resolved() const {
  SynthSpec s = *this;
  if (s.n_samples == 0) throw Error(ErrorKind::kUsage, "synth: n_samples must be positive");
  if (s.n_exits == 0) throw Error(ErrorKind::kUsage, "synth: n_exits must be positive");
  if (s.n_classes < 2) throw Error(ErrorKind::kUsage, "synth: n_classes must be >= 2");
  if (s.per_exit_accuracy.empty()) {
    for (std::size_t k = 0; k < s.n_exits; ++k) {
      const double t = s.n_exits == 1 ? 1.0 : static_cast<double>(k) / static_cast<double>(s.n_exits - 1);
      s.per_exit_accuracy.push_back(0.55 + 0.35 * t);
    }
  }
  if (s.costs.empty()) {
    for (std::size_t k = 0; k < s.n_exits; ++k) s.costs.push_back(static_cast<double>(k + 1));
  }
  if (s.per_exit_accuracy.size() != s.n_exits || s.costs.size() != s.n_exits) {
    throw Error(ErrorKind::kUsage, "synth: accuracy and cost lists need one entry per exit");
  }
  for (std::size_t k = 0; k < s.n_exits; ++k) {
    const double a = s.per_exit_accuracy[k];
    if (!(a > 0.0 && a <= 1.0)) throw Error(ErrorKind::kUsage, "synth: accuracies must be in (0, 1]");
    if (k > 0 && a < s.per_exit_accuracy[k - 1]) {
      throw Error(ErrorKind::kUsage, "synth: infeasible accuracy profile (decreasing)");
    }
    if (k > 0 && !(s.costs[k] > s.costs[k - 1])) throw Error(ErrorKind::kUsage, "synth: costs must increase");
  }
  if (!(s.difficulty_mix >= 0.0 && s.difficulty_mix <= 1.0)) {
    throw Error(ErrorKind::kUsage, "synth: difficulty_mix must be in [0, 1]");
  }
  if (!(s.concentration > 0.0)) throw Error(ErrorKind::kUsage, "synth: concentration must be positive");
  return s;
}

ExitLog generate(const SynthSpec& raw) {
  const SynthSpec spec = raw.resolved();
  const std::size_t N = spec.n_samples, K = spec.n_exits, C = spec.n_classes;
  const double mix = spec.difficulty_mix;

  // Hard samples: P(first right exit <= k) so that the mixture hits the target accuracy.
  std::vector<double> hard_cdf(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double f = mix >= 1.0 ? 1.0 : (spec.per_exit_accuracy[k] - mix) / (1.0 - mix);
    hard_cdf[k] = std::clamp(f, k > 0 ? hard_cdf[k - 1] : 0.0, 1.0);
  }
  const std::size_t attractors = std::max<std::size_t>(1, static_cast<std::size_t>(kAttractorFraction * C));

  ExitLog log;
  log.n_samples = N;
  log.n_exits = K;
  log.n_classes = C;
  log.costs = spec.costs;
  log.split_name = spec.split_name;
  log.scores.resize(N * K * C);
  log.labels.resize(N);

  parallel_chunks((N + 255) / 256, [&](std::size_t chunk) {
    std::vector<double> alpha(C);
    for (std::size_t n = chunk * 256; n < std::min(N, (chunk + 1) * 256); ++n) {
      Rng rng(splitmix64(spec.seed ^ splitmix64(n + 1)));
      const auto label = static_cast<std::uint32_t>(uniform_index(rng, C));
      const bool easy = uniform01(rng) < mix;
      std::size_t first_right = 0;
      if (!easy) {
        const double u = uniform01(rng);
        first_right = K;  // never right
        for (std::size_t k = 0; k < K; ++k) {
          if (u < hard_cdf[k]) {
            first_right = k;
            break;
          }
        }
      }
      log.labels[n] = label;

      std::size_t wrong = C;
      for (std::size_t k = 0; k < K; ++k) {
        const double depth = 0.6 + 0.4 * static_cast<double>(k + 1) / static_cast<double>(K);
        std::fill(alpha.begin(), alpha.end(), 1.0);
        std::vector<double> p;
        if (k >= first_right) {
          alpha[label] = spec.concentration * depth * (easy ? 1.0 : kHardSharpness);
          p = dirichlet_row(rng, alpha, label);
        } else {
          if (wrong == C || uniform01(rng) >= kStickyWrong) {
            do {
              wrong = uniform01(rng) < kAttractorPull ? uniform_index(rng, attractors) : uniform_index(rng, C);
            } while (wrong == label);
          }
          alpha[wrong] = spec.concentration * depth * kWrongTopShare;
          alpha[label] = spec.concentration * depth * kWrongTrueShare;
          p = dirichlet_row(rng, alpha, wrong, label);
        }
        float* row = log.scores.data() + (n * K + k) * C;
        for (std::size_t c = 0; c < C; ++c) row[c] = static_cast<float>(p[c]);
        const std::size_t intended = k >= first_right ? label : wrong;
        const std::size_t got = argmax(std::span<const float>(row, C));
        if (got != intended) std::swap(row[got], row[intended]);
      }
    }
  });
  return log;
}

OracleResult brute_force_best_thresholds(const ExitLog& log, std::span<const double> scores, double budget,
                                         std::size_t grid_size) {
  const std::size_t N = log.n_samples, K = log.n_exits;
  if (N > 64 || K > 3) throw Error(ErrorKind::kUsage, "brute force limited to N <= 64 and K <= 3");
  if (grid_size == 0) throw Error(ErrorKind::kUsage, "grid_size must be positive");
  if (scores.size() != N * K) throw Error(ErrorKind::kUsage, "scores must be [N][K]");

  std::vector<std::vector<double>> grid(K);
  for (std::size_t k = 0; k + 1 < K; ++k) {
    std::vector<double> col(N);
    for (std::size_t n = 0; n < N; ++n) col[n] = scores[n * K + k];
    std::sort(col.begin(), col.end());
    col.erase(std::unique(col.begin(), col.end()), col.end());
    if (grid_size >= col.size()) {
      grid[k] = col;
      grid[k].push_back(std::numeric_limits<double>::infinity());
    } else {
      for (std::size_t i = 0; i < grid_size; ++i) grid[k].push_back(col[i * col.size() / grid_size]);
    }
  }
  grid[K - 1] = {-std::numeric_limits<double>::infinity()};

  std::vector<std::uint8_t> right(N * K);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < K; ++k) right[n * K + k] = argmax(log.probs(n, k)) == log.labels[n];
  }

  OracleResult best;
  bool found = false;
  std::vector<double> t(K);
  const double slack = 1e-12 * std::max(1.0, std::abs(budget));
  std::function<void(std::size_t)> search = [&](std::size_t k) {
    if (k + 1 < K) {
      for (double v : grid[k]) {
        t[k] = v;
        search(k + 1);
      }
      return;
    }
    t[K - 1] = grid[K - 1][0];
    std::size_t correct = 0;
    double cost = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      std::size_t e = K - 1;
      for (std::size_t j = 0; j < K; ++j) {
        if (scores[n * K + j] >= t[j]) {
          e = j;
          break;
        }
      }
      correct += right[n * K + e];
      cost += log.costs[e];
    }
    cost /= static_cast<double>(N);
    if (cost > budget + slack) return;
    if (!found || correct > best.correct || (correct == best.correct && cost < best.avg_cost)) {
      found = true;
      best.correct = correct;
      best.avg_cost = cost;
      best.thresholds = t;
    }
  };
  search(0);
  if (!found) throw Error(ErrorKind::kInfeasible, "no threshold combination on the grid meets the budget");
  best.accuracy = static_cast<double>(best.correct) / static_cast<double>(N);
  return best;
}

}  // namespace exitsched
