#include "exitsched/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "exitsched/confidence.hpp"
#include "exitsched/error.hpp"
#include "json.hpp"

namespace exitsched {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t bin_of(double score) {
  const double s = std::clamp(score, 0.0, 1.0);
  return std::min(kHistogramBins - 1, static_cast<std::size_t>(s * static_cast<double>(kHistogramBins)));
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::ofstream open_out(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + file.string());
  return out;
}

}  // namespace

EvalReport evaluate_scores(std::span<const double> scores, std::span<const double> thresholds, const ExitLog& log,
                           std::string label, double budget) {
  const std::size_t N = log.n_samples, K = log.n_exits;
  if (thresholds.size() != K || scores.size() != N * K) {
    throw Error(ErrorKind::kData, "dimension mismatch: policy has " + std::to_string(thresholds.size()) +
                                      " exits, log has " + std::to_string(K));
  }
  EvalReport r;
  r.policy = std::move(label);
  r.budget = budget;
  r.per_exit_counts.assign(K, 0);
  r.per_exit_correct.assign(K, 0);
  r.per_sample_exit.resize(N);
  r.per_sample_score.resize(N);
  r.per_sample_correct.resize(N);
  r.score_hist_correct.assign(K, Histogram{});
  r.score_hist_incorrect.assign(K, Histogram{});

  double cost = 0.0;
  std::size_t correct = 0;
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t exit = K - 1;
    for (std::size_t k = 0; k < K; ++k) {
      if (scores[n * K + k] >= thresholds[k]) {
        exit = k;
        break;
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      const bool right = argmax(log.probs(n, k)) == log.labels[n];
      (right ? r.score_hist_correct : r.score_hist_incorrect)[k][bin_of(scores[n * K + k])]++;
    }
    const bool right = argmax(log.probs(n, exit)) == log.labels[n];
    r.per_sample_exit[n] = exit;
    r.per_sample_score[n] = scores[n * K + exit];
    r.per_sample_correct[n] = right ? 1 : 0;
    r.per_exit_counts[exit]++;
    if (right) {
      r.per_exit_correct[exit]++;
      ++correct;
    }
  }
  for (std::size_t k = 0; k < K; ++k) cost += static_cast<double>(r.per_exit_counts[k]) * log.costs[k];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(N);
  r.avg_cost = cost / static_cast<double>(N);
  r.overshoot = r.avg_cost > 1.05 * budget;
  return r;
}

EvalReport evaluate(const Policy& policy, const ExitLog& log) {
  if (policy.params && (policy.params->n_exits() != log.n_exits || policy.params->n_classes() != log.n_classes)) {
    throw Error(ErrorKind::kData, "dimension mismatch between policy parameters and log");
  }
  const auto scores = score_matrix(policy.kind, policy.params ? &*policy.params : nullptr, log);
  return evaluate_scores(scores, policy.thresholds, log, to_string(policy.kind), policy.budget);
}

void verify_report(const EvalReport& report, const ExitLog& log) {
  const std::size_t K = log.n_exits;
  std::vector<std::size_t> counts(K, 0), correct(K, 0);
  double cost = 0.0;
  for (std::size_t n = 0; n < log.n_samples; ++n) {
    const std::size_t e = report.per_sample_exit.at(n);
    counts.at(e)++;
    if (argmax(log.probs(n, e)) == log.labels[n]) correct[e]++;
    cost += log.costs[e];
  }
  std::size_t total = 0, total_correct = 0;
  for (std::size_t k = 0; k < K; ++k) {
    total += counts[k];
    total_correct += correct[k];
  }
  const double N = static_cast<double>(log.n_samples);
  if (counts != report.per_exit_counts || correct != report.per_exit_correct || total != log.n_samples ||
      std::abs(static_cast<double>(total_correct) / N - report.accuracy) > 1e-12 ||
      std::abs(cost / N - report.avg_cost) > 1e-9 * std::max(1.0, report.avg_cost)) {
    throw std::logic_error("report for '" + report.policy + "' is inconsistent with its per-sample exits");
  }
}

std::vector<EvalReport> sweep(const ExitLog& val, const ExitLog& test, std::span<const double> budgets,
                              const SweepConfig& cfg) {
  if (val.n_exits != test.n_exits || val.n_classes != test.n_classes || val.costs != test.costs) {
    throw Error(ErrorKind::kData, "validation and test logs disagree on exits, classes or costs");
  }
  std::vector<EvalReport> out;
  for (double B : budgets) {
    const BudgetSpec spec{B, cfg.alpha, cfg.beta};
    check_budget(spec, val.costs);
    for (PolicyKind kind : cfg.kinds) {
      Policy policy;
      if (kind == PolicyKind::kEENet) {
        const auto trained = train(val, spec, cfg.train);
        policy = calibrate_eenet(trained.params, val, spec);
      } else {
        policy = calibrate_baseline(kind, val, spec);
      }
      out.push_back(evaluate(policy, test));
    }
  }
  return out;
}

Ablation ablation_variants(const PolicyParams& params, const ExitLog& val, const ExitLog& test,
                           const BudgetSpec& budget) {
  check_budget(budget, val.costs);
  const auto learned = learned_quota(params, val);
  const auto geometric = geometric_quota(val.costs, budget.budget);

  Ablation a;
  a.full = evaluate(calibrate_with_quota(PolicyKind::kEENet, &params, val, learned, budget.budget), test);
  a.without_scoring = evaluate(calibrate_with_quota(PolicyKind::kMaxScore, nullptr, val, learned, budget.budget), test);
  a.without_scoring.policy = "eenet_without_scoring";
  a.without_distribution =
      evaluate(calibrate_with_quota(PolicyKind::kEENet, &params, val, geometric, budget.budget), test);
  a.without_distribution.policy = "eenet_without_distribution";
  return a;
}

Ablation ablation_variants(const ExitLog& val, const ExitLog& test, const BudgetSpec& budget,
                           const TrainConfig& cfg) {
  const auto trained = train(val, budget, cfg);
  return ablation_variants(trained.params, val, test, budget);
}

void write_reports_csv(std::span<const EvalReport> reports, const fs::path& file, const std::string& config_digest) {
  auto out = open_out(file);
  const std::size_t K = reports.empty() ? 0 : reports.front().per_exit_counts.size();
  out << "budget,policy,accuracy,avg_cost,overshoot";
  for (std::size_t k = 1; k <= K; ++k) out << ",count_" << k;
  for (std::size_t k = 1; k <= K; ++k) out << ",correct_" << k;
  out << ",config_digest\n";
  for (const auto& r : reports) {
    out << fmt("%.6g", r.budget) << ',' << r.policy << ',' << fmt("%.6f", r.accuracy) << ','
        << fmt("%.6f", r.avg_cost) << ',' << (r.overshoot ? 1 : 0);
    for (auto c : r.per_exit_counts) out << ',' << c;
    for (auto c : r.per_exit_correct) out << ',' << c;
    out << ',' << config_digest << '\n';
  }
}

void write_reports_json(std::span<const EvalReport> reports, const fs::path& file, const std::string& config_digest) {
  json arr = json::array();
  for (const auto& r : reports) {
    arr.push_back({{"policy", r.policy},
                   {"budget", r.budget},
                   {"accuracy", r.accuracy},
                   {"avg_cost", r.avg_cost},
                   {"overshoot", r.overshoot},
                   {"per_exit_counts", r.per_exit_counts},
                   {"per_exit_correct", r.per_exit_correct},
                   {"score_hist_correct", r.score_hist_correct},
                   {"score_hist_incorrect", r.score_hist_incorrect}});
  }
  auto out = open_out(file);
  out << json{{"config_digest", config_digest}, {"reports", arr}}.dump(2) << '\n';
}

void write_comparison_csv(std::span<const EvalReport> reports, const fs::path& file,
                          const std::string& config_digest) {
  std::vector<std::string> policies;
  std::vector<double> budgets;
  std::map<std::pair<double, std::string>, double> acc;
  for (const auto& r : reports) {
    if (std::find(policies.begin(), policies.end(), r.policy) == policies.end()) policies.push_back(r.policy);
    if (std::find(budgets.begin(), budgets.end(), r.budget) == budgets.end()) budgets.push_back(r.budget);
    acc[{r.budget, r.policy}] = r.accuracy;
  }
  auto out = open_out(file);
  out << "budget";
  for (const auto& p : policies) out << ',' << p;
  out << ",config_digest\n";
  for (double b : budgets) {
    out << fmt("%.6g", b);
    for (const auto& p : policies) {
      auto it = acc.find({b, p});
      out << ',' << (it == acc.end() ? std::string{} : fmt("%.4f", 100.0 * it->second));
    }
    out << ',' << config_digest << '\n';
  }
}

void write_exit_trace(const EvalReport& report, const fs::path& file) {
  auto out = open_out(file);
  out << "index,exit,correct,score\n";
  for (std::size_t n = 0; n < report.per_sample_exit.size(); ++n) {
    out << n << ',' << report.per_sample_exit[n] + 1 << ',' << int(report.per_sample_correct[n]) << ','
        << fmt("%.9g", report.per_sample_score[n]) << '\n';
  }
}

}  // namespace exitsched
