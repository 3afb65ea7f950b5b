#include "exitsched/calibrator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "exitsched/error.hpp"
#include "json.hpp"

namespace exitsched {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kEENet: return "eenet";
    case PolicyKind::kMaxScore: return "max_score";
    case PolicyKind::kEntropy: return "entropy";
    case PolicyKind::kVote: return "vote";
  }
  return "unknown";
}

PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "eenet") return PolicyKind::kEENet;
  if (name == "max_score") return PolicyKind::kMaxScore;
  if (name == "entropy") return PolicyKind::kEntropy;
  if (name == "vote") return PolicyKind::kVote;
  throw Error(ErrorKind::kUsage, "unknown policy kind '" + name + "'");
}

namespace {

ConfidenceKind confidence_kind(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kMaxScore: return ConfidenceKind::kMax;
    case PolicyKind::kEntropy: return ConfidenceKind::kEntropy;
    case PolicyKind::kVote: return ConfidenceKind::kVote;
    case PolicyKind::kEENet: break;
  }
  throw Error(ErrorKind::kUsage, "eenet has no confidence measure");
}

std::size_t round_half_away(double x) { return static_cast<std::size_t>(std::llround(std::max(0.0, x))); }

double to_file(double t) {
  if (t == kNever) return kThresholdSentinel;
  if (t == kAlways) return -kThresholdSentinel;
  return t;
}

double from_file(double t) {
  if (t >= kThresholdSentinel) return kNever;
  if (t <= -kThresholdSentinel) return kAlways;
  return t;
}

}  // namespace

std::vector<double> score_matrix(PolicyKind kind, const PolicyParams* params, const ExitLog& log) {
  const std::size_t N = log.n_samples, K = log.n_exits;
  std::vector<double> scores(N * K);
  if (kind == PolicyKind::kEENet) {
    if (params == nullptr) throw Error(ErrorKind::kUsage, "eenet scores need policy parameters");
    ForwardTrace trace;
    for (std::size_t n = 0; n < N; ++n) {
      forward(*params, log.sample(n), trace);
      std::copy(trace.out.q_hat.begin(), trace.out.q_hat.end(), scores.begin() + static_cast<std::ptrdiff_t>(n * K));
    }
    return scores;
  }
  const ConfidenceKind which = confidence_kind(kind);
  for (std::size_t n = 0; n < N; ++n) {
    const auto profile = confidence_profile(log.sample(n), K, log.n_classes);
    for (std::size_t k = 0; k < K; ++k) scores[n * K + k] = select(profile[k], which);
  }
  return scores;
}

QuotaFill fill_quotas(std::span<const double> scores, std::size_t n_samples, std::size_t n_exits,
                      std::span<const double> quota) {
  if (scores.size() != n_samples * n_exits || quota.size() != n_exits) {
    throw Error(ErrorKind::kUsage, "fill_quotas: shape mismatch");
  }
  QuotaFill fill;
  fill.thresholds.assign(n_exits, kNever);
  fill.marked.assign(n_exits, 0);
  fill.marked_exit.assign(n_samples, n_exits - 1);
  std::vector<bool> done(n_samples, false);
  std::vector<std::size_t> pool;
  std::size_t remaining = n_samples;
  std::size_t carry = 0;
  for (std::size_t k = 0; k + 1 < n_exits; ++k) {
    const std::size_t want = round_half_away(static_cast<double>(n_samples) * quota[k]) + carry;
    const std::size_t take = std::min(want, remaining);
    carry = want - take;
    if (take == 0) continue;
    pool.clear();
    for (std::size_t n = 0; n < n_samples; ++n) {
      if (!done[n]) pool.push_back(n);
    }
    std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
      return scores[a * n_exits + k] > scores[b * n_exits + k];
    });
    for (std::size_t i = 0; i < take; ++i) {
      done[pool[i]] = true;
      fill.marked_exit[pool[i]] = k;
    }
    fill.thresholds[k] = scores[pool[take - 1] * n_exits + k];
    fill.marked[k] = take;
    remaining -= take;
  }
  fill.marked[n_exits - 1] = remaining;
  fill.thresholds[n_exits - 1] = kAlways;
  return fill;
}

std::vector<double> geometric_quota(std::span<const double> costs, double budget) {
  const std::size_t K = costs.size();
  if (K == 0) throw Error(ErrorKind::kData, "no exit costs");
  const double tol = 1e-9 * std::max(1.0, std::abs(budget));
  if (budget < costs.front() - tol || budget > costs.back() + tol) {
    std::ostringstream msg;
    msg << "no feasible geometric exit distribution for budget " << budget << " within [" << costs.front() << ", "
        << costs.back() << "]";
    throw Error(ErrorKind::kInfeasible, msg.str());
  }
  auto quota_at = [K](double log_rho) {
    std::vector<double> p(K);
    // softmax over (k-1) * log(rho), stable for large |log rho|
    const double top = log_rho >= 0.0 ? static_cast<double>(K - 1) * log_rho : 0.0;
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      p[k] = std::exp(static_cast<double>(k) * log_rho - top);
      z += p[k];
    }
    for (double& v : p) v /= z;
    return p;
  };
  auto cost_at = [&](double log_rho) {
    const auto p = quota_at(log_rho);
    return std::inner_product(p.begin(), p.end(), costs.begin(), 0.0);
  };
  if (K == 1) return {1.0};
  double lo = -60.0, hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double c = cost_at(mid);
    if (std::abs(c - budget) <= 1e-9 * budget) {
      lo = hi = mid;
      break;
    }
    (c < budget ? lo : hi) = mid;
  }
  return quota_at(0.5 * (lo + hi));
}

std::vector<double> learned_quota(const PolicyParams& params, const ExitLog& log) {
  const std::size_t K = log.n_exits;
  std::vector<double> p(K, 0.0);
  ForwardTrace trace;
  for (std::size_t n = 0; n < log.n_samples; ++n) {
    forward(params, log.sample(n), trace);
    for (std::size_t k = 0; k < K; ++k) p[k] += trace.out.r_hat[k];
  }
  for (double& v : p) v /= static_cast<double>(log.n_samples);
  return p;
}

Policy calibrate_with_quota(PolicyKind kind, const PolicyParams* params, const ExitLog& log,
                            std::span<const double> quota, double budget) {
  const auto scores = score_matrix(kind, params, log);
  auto fill = fill_quotas(scores, log.n_samples, log.n_exits, quota);
  Policy policy;
  policy.kind = kind;
  if (kind == PolicyKind::kEENet) policy.params = *params;
  policy.thresholds = std::move(fill.thresholds);
  policy.quota.assign(quota.begin(), quota.end());
  policy.budget = budget;
  policy.calibration_digest = log_digest(log);
  return policy;
}

Policy calibrate_eenet(const PolicyParams& params, const ExitLog& log, const BudgetSpec& budget) {
  check_budget(budget, log.costs);
  const auto quota = learned_quota(params, log);
  return calibrate_with_quota(PolicyKind::kEENet, &params, log, quota, budget.budget);
}

Policy calibrate_baseline(PolicyKind kind, const ExitLog& log, const BudgetSpec& budget) {
  if (kind == PolicyKind::kEENet) throw Error(ErrorKind::kUsage, "calibrate_baseline: eenet is not a baseline");
  const auto quota = geometric_quota(log.costs, budget.budget);
  return calibrate_with_quota(kind, nullptr, log, quota, budget.budget);
}

void save_policy(const Policy& policy, const fs::path& file, bool write_checkpoint) {
  json thresholds = json::array();
  for (double t : policy.thresholds) thresholds.push_back(to_file(t));
  std::string checkpoint = policy.checkpoint;
  if (policy.kind == PolicyKind::kEENet) {
    if (!policy.params) throw Error(ErrorKind::kUsage, "eenet policy without parameters");
    if (checkpoint.empty()) checkpoint = file.stem().string() + ".checkpoint";
    if (write_checkpoint) save_checkpoint(*policy.params, file.parent_path() / checkpoint, policy.config_digest);
  }
  const json j{{"kind", to_string(policy.kind)},
               {"thresholds", thresholds},
               {"quota", policy.quota},
               {"budget", policy.budget},
               {"checkpoint", policy.kind == PolicyKind::kEENet ? json(checkpoint) : json(nullptr)},
               {"calibration_log_digest", policy.calibration_digest},
               {"config_digest", policy.config_digest}};
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + file.string());
  out << j.dump(2) << '\n';
}

Policy load_policy(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::kIo, "missing file: " + file.string());
  Policy p;
  try {
    const json j = json::parse(in);
    p.kind = parse_policy_kind(j.at("kind").get<std::string>());
    for (double t : j.at("thresholds").get<std::vector<double>>()) p.thresholds.push_back(from_file(t));
    p.quota = j.at("quota").get<std::vector<double>>();
    p.budget = j.at("budget").get<double>();
    p.calibration_digest = j.value("calibration_log_digest", std::string{});
    p.config_digest = j.value("config_digest", std::string{});
    if (p.kind == PolicyKind::kEENet) {
      p.checkpoint = j.at("checkpoint").get<std::string>();
      p.params = load_checkpoint(file.parent_path() / p.checkpoint);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kData, "policy file " + file.string() + ": " + e.what());
  }
  if (p.thresholds.empty()) throw Error(ErrorKind::kData, "policy has no thresholds");
  return p;
}

}  // namespace exitsched
