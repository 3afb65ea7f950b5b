#include "exitsched/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "exitsched/adam.hpp"
#include "exitsched/confidence.hpp"
#include "exitsched/error.hpp"
#include "exitsched/util.hpp"
#include "json.hpp"

namespace exitsched {

namespace {

constexpr std::size_t kChunk = 64;

std::size_t n_chunks(std::size_t n) { return (n + kChunk - 1) / kChunk; }

double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

}  // namespace

TargetSet build_targets(const ExitLog& log) {
  const std::size_t N = log.n_samples, K = log.n_exits;
  TargetSet t;
  t.n_samples = N;
  t.n_exits = K;
  t.q.assign(N * K, 0);
  t.assigned.assign(N * K, 0);
  t.r_denominator.assign(N, 0);
  t.r.assign(N * K, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    std::uint32_t correct = 0;
    for (std::size_t k = 0; k < K; ++k) {
      if (argmax(log.probs(n, k)) == log.labels[n]) {
        t.q[n * K + k] = 1;
        ++correct;
      }
    }
    for (std::size_t k = 0; k < K; ++k) t.assigned[n * K + k] = correct == 0 ? 1 : t.q[n * K + k];
    t.r_denominator[n] = correct == 0 ? static_cast<std::uint32_t>(K) : correct;
    const double share = 1.0 / static_cast<double>(t.r_denominator[n]);
    for (std::size_t k = 0; k < K; ++k) t.r[n * K + k] = t.assigned[n * K + k] ? share : 0.0;
  }
  return t;
}

std::vector<double> survival_weights(std::span<const double> r_hat, std::size_t n_samples, std::size_t n_exits) {
  if (r_hat.size() != n_samples * n_exits) throw Error(ErrorKind::kUsage, "r_hat must be [N][K]");
  std::vector<double> w(n_samples * n_exits);
  std::vector<double> column_mass(n_exits, 0.0);
  for (std::size_t n = 0; n < n_samples; ++n) {
    double exited = 0.0;
    for (std::size_t k = 0; k < n_exits; ++k) {
      const double alive = std::max(0.0, 1.0 - exited);
      w[n * n_exits + k] = alive;
      column_mass[k] += alive;
      exited += r_hat[n * n_exits + k];
    }
  }
  const double uniform = 1.0 / static_cast<double>(n_samples);
  for (std::size_t k = 0; k < n_exits; ++k) {
    const bool degenerate = !(column_mass[k] > 0.0);
    for (std::size_t n = 0; n < n_samples; ++n) {
      double& v = w[n * n_exits + k];
      v = degenerate ? uniform : v / column_mass[k];
    }
  }
  return w;
}

LossBreakdown loss(const PolicyParams& params, const ExitLog& log, std::span<const std::size_t> batch,
                   const TargetSet& targets, const BudgetSpec& budget, const LossOptions& opts,
                   std::span<double> grad) {
  const std::size_t M = batch.size();
  const std::size_t K = params.n_exits();
  if (M == 0) throw Error(ErrorKind::kUsage, "empty batch");
  if (K != log.n_exits || params.n_classes() != log.n_classes) {
    throw Error(ErrorKind::kData, "dimension mismatch between policy and log");
  }
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != params.weights().size()) throw Error(ErrorKind::kUsage, "gradient size mismatch");

  std::vector<double> q_hat(M * K), r_hat(M * K);
  parallel_chunks(n_chunks(M), [&](std::size_t c) {
    ForwardTrace trace;
    for (std::size_t b = c * kChunk; b < std::min(M, (c + 1) * kChunk); ++b) {
      forward(params, log.sample(batch[b]), trace);
      std::copy(trace.out.q_hat.begin(), trace.out.q_hat.end(), q_hat.begin() + static_cast<std::ptrdiff_t>(b * K));
      std::copy(trace.out.r_hat.begin(), trace.out.r_hat.end(), r_hat.begin() + static_cast<std::ptrdiff_t>(b * K));
    }
  });

  std::vector<double> w;
  std::span<const double> weights = opts.frozen_weights;
  if (weights.empty()) {
    w = survival_weights(r_hat, M, K);
    weights = w;
  } else if (weights.size() != M * K) {
    throw Error(ErrorKind::kUsage, "frozen weights must be [batch][K]");
  }

  const double sign = opts.paper_sign ? -1.0 : 1.0;
  const double Kd = static_cast<double>(K);
  const double Md = static_cast<double>(M);
  const double B = budget.budget;

  LossBreakdown out;
  double expected_cost = 0.0;
  for (std::size_t b = 0; b < M; ++b) {
    const std::size_t n = batch[b];
    for (std::size_t k = 0; k < K; ++k) {
      const double qh = clamp_prob(q_hat[b * K + k]);
      const double q = targets.q_at(n, k) ? 1.0 : 0.0;
      const double bce = -(q * std::log(qh) + (1.0 - q) * std::log(1.0 - qh));
      out.utility += sign * weights[b * K + k] * bce / Kd;
      expected_cost += r_hat[b * K + k] * log.costs[k];
      const double r = targets.r_at(n, k);
      if (r > 0.0) out.assignment -= r * std::log(std::max(r_hat[b * K + k], kProbFloor)) / (Md * Kd);
    }
  }
  expected_cost /= Md;
  out.budget = std::abs(B - expected_cost) / B;
  out.objective = out.utility + budget.alpha * out.budget + budget.beta * out.assignment;
  if (opts.l2_weight > 0.0) {
    double sq = 0.0;
    for (double v : params.weights()) sq += v * v;
    out.penalty = 0.5 * opts.l2_weight * sq;
  }
  if (!want_grad) return out;

  // d|B - E|/dE; zero at the kink.
  const double budget_slope = expected_cost > B ? 1.0 : (expected_cost < B ? -1.0 : 0.0);
  const std::size_t P = params.weights().size();
  const std::size_t chunks = n_chunks(M);
  std::vector<std::vector<double>> partial(chunks);
  parallel_chunks(chunks, [&](std::size_t c) {
    auto& g = partial[c];
    g.assign(P, 0.0);
    ForwardTrace trace;
    std::vector<double> d_q(K), d_r(K), d_rt(K);
    for (std::size_t b = c * kChunk; b < std::min(M, (c + 1) * kChunk); ++b) {
      const std::size_t n = batch[b];
      forward(params, log.sample(n), trace);
      for (std::size_t k = 0; k < K; ++k) {
        const double qh = clamp_prob(trace.out.q_hat[k]);
        const double q = targets.q_at(n, k) ? 1.0 : 0.0;
        d_q[k] = sign * weights[b * K + k] / Kd * (-q / qh + (1.0 - q) / (1.0 - qh));
        d_r[k] = budget.alpha * budget_slope * log.costs[k] / (Md * B);
        d_rt[k] = budget.beta * (trace.out.r_hat[k] - targets.r_at(n, k)) / (Md * Kd);
      }
      backward(params, trace, {d_q, d_r, d_rt}, opts.detach_history, g);
    }
  });
  for (const auto& g : partial) {
    for (std::size_t i = 0; i < P; ++i) grad[i] += g[i];
  }
  if (opts.l2_weight > 0.0) {
    const auto theta = params.weights();
    for (std::size_t i = 0; i < P; ++i) grad[i] += opts.l2_weight * theta[i];
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::kUsage, "learning_rate must be positive");
  if (l2_weight < 0.0) throw Error(ErrorKind::kUsage, "l2_weight must be non-negative");
  if (batch_size == 0) throw Error(ErrorKind::kUsage, "batch_size must be positive");
  if (!(holdout_fraction > 0.0 && holdout_fraction <= 0.5)) {
    throw Error(ErrorKind::kUsage, "holdout_fraction must be in (0, 0.5]");
  }
  if (!(hidden_ratio > 0.0)) throw Error(ErrorKind::kUsage, "hidden_ratio must be positive");
}

TrainConfig image_preset() { return TrainConfig{}; }

BudgetSpec image_budget(double budget) { return BudgetSpec{budget, 0.1, 1e-3}; }

TrainConfig text_preset() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.hidden_ratio = 2.0;
  return cfg;
}

BudgetSpec text_budget(double budget) { return BudgetSpec{budget, 1e-2, 1e-4}; }

TrainResult train(const ExitLog& log, const BudgetSpec& budget, const TrainConfig& cfg) {
  cfg.validate();
  check_budget(budget, log.costs);
  if (log.n_classes < 2) throw Error(ErrorKind::kData, "training needs at least 2 classes");

  auto [fit_log, holdout_log] = split_log(log, 1.0 - cfg.holdout_fraction, cfg.seed);
  const TargetSet fit_targets = build_targets(fit_log);
  const TargetSet holdout_targets = build_targets(holdout_log);
  std::vector<std::size_t> fit_index(fit_log.n_samples), holdout_index(holdout_log.n_samples);
  std::iota(fit_index.begin(), fit_index.end(), 0);
  std::iota(holdout_index.begin(), holdout_index.end(), 0);

  LossOptions opts;
  opts.paper_sign = cfg.paper_sign;
  opts.detach_history = cfg.detach_history;
  LossOptions step_opts = opts;
  step_opts.l2_weight = cfg.l2_weight;

  TrainResult result;
  PolicyParams params = PolicyParams::initialize(log.n_exits, log.n_classes, cfg.hidden_ratio, cfg.seed);
  auto record = [&](std::size_t epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = loss(params, fit_log, fit_index, fit_targets, budget, opts);
    rec.holdout_total = loss(params, holdout_log, holdout_index, holdout_targets, budget, opts).objective;
    result.history.push_back(rec);
    return rec.holdout_total;
  };

  double best = record(0);
  result.params = params;
  result.best_epoch = 0;

  Adam adam(params.weights().size(), {.learning_rate = cfg.learning_rate});
  Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<double> grad(params.weights().size());
  std::vector<std::size_t> order = fit_index;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && stale < cfg.patience_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      loss(params, fit_log, std::span(order).subspan(start, stop - start), fit_targets, budget, step_opts, grad);
      adam.step(params.weights(), grad);
    }
    const double holdout = record(epoch);
    if (holdout < best) {
      best = holdout;
      result.params = params;
      result.best_epoch = epoch;
      stale = 0;
    } else {
      ++stale;
    }
  }
  return result;
}

void write_train_log(std::span<const EpochRecord> history, const std::filesystem::path& file,
                     const std::string& config_digest) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + file.string());
  for (const auto& rec : history) {
    nlohmann::json line{{"epoch", rec.epoch},
                        {"L_g", rec.train.utility},
                        {"L_budget", rec.train.budget},
                        {"L_CE", rec.train.assignment},
                        {"total", rec.train.objective},
                        {"holdout_total", rec.holdout_total}};
    if (!config_digest.empty()) line["config_digest"] = config_digest;
    out << line.dump() << '\n';
  }
}

}  // namespace exitsched
