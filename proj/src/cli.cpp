#include "exitsched/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "exitsched/calibrator.hpp"
#include "exitsched/error.hpp"
#include "exitsched/exitlog.hpp"
#include "exitsched/simulator.hpp"
#include "exitsched/synthgen.hpp"
#include "exitsched/trainer.hpp"
#include "exitsched/util.hpp"
#include "json.hpp"

namespace exitsched::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Flat JSON object -> CLI11 config items, so `--config run.json` works like TOML.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config: top level must be an object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.name = key;
      auto text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(text(v));
      } else {
        item.inputs.push_back(text(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }
};

struct RunConfig {
  std::string command;
  std::string val, test, out = "out";
  std::string policy_file, checkpoint;
  std::vector<double> budgets;
  std::vector<std::string> policies;
  std::string preset = "image";
  TrainConfig train;
  double alpha = 0.1;
  double beta = 1e-3;
  bool emit_exit_trace = false;
  SynthSpec synth;
  bool benchmark = false;
  bool jsonl = false;
};

std::string fmt_budget(double b) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", b);
  return buf;
}

/// Canonical description of everything that influences the outputs; output paths
/// are excluded and input logs enter by content digest.
json describe(const RunConfig& cfg, const std::optional<ExitLog>& val, const std::optional<ExitLog>& test) {
  json j{{"command", cfg.command},
         {"budgets", cfg.budgets},
         {"policies", cfg.policies},
         {"alpha", cfg.alpha},
         {"beta", cfg.beta},
         {"lr", cfg.train.learning_rate},
         {"l2", cfg.train.l2_weight},
         {"epochs", cfg.train.max_epochs},
         {"patience", cfg.train.patience_epochs},
         {"batch_size", cfg.train.batch_size},
         {"holdout", cfg.train.holdout_fraction},
         {"hidden_ratio", cfg.train.hidden_ratio},
         {"paper_sign", cfg.train.paper_sign},
         {"detach_b", cfg.train.detach_history},
         {"seed", cfg.train.seed}};
  if (val) j["val_digest"] = log_digest(*val);
  if (test) j["test_digest"] = log_digest(*test);
  if (!cfg.checkpoint.empty()) j["checkpoint"] = fs::path(cfg.checkpoint).filename().string();
  if (!cfg.policy_file.empty()) j["policy_file"] = fs::path(cfg.policy_file).filename().string();
  if (cfg.command == "synth") {
    const auto s = cfg.synth.resolved();
    j["synth"] = {{"n", s.n_samples},     {"k", s.n_exits},          {"c", s.n_classes},
                  {"accuracies", s.per_exit_accuracy}, {"mix", s.difficulty_mix},
                  {"concentration", s.concentration}, {"costs", s.costs}, {"seed", s.seed}};
  }
  return j;
}

std::string digest_of(const json& j) {
  Fnv1a h;
  h.update(j.dump());
  return h.hex();
}

ExitLog require_log(const std::string& path, const char* flag) {
  if (path.empty()) throw Error(ErrorKind::kUsage, std::string(flag) + " is required");
  if (!fs::exists(path)) throw Error(ErrorKind::kUsage, std::string(flag) + " path does not exist: " + path);
  return load_log(path);
}

double require_single_budget(const RunConfig& cfg) {
  if (cfg.budgets.size() != 1) throw Error(ErrorKind::kUsage, "exactly one --budget is required");
  return cfg.budgets.front();
}

std::vector<PolicyKind> policy_kinds(const RunConfig& cfg) {
  std::vector<PolicyKind> kinds;
  if (cfg.policies.empty()) {
    kinds = {PolicyKind::kEENet, PolicyKind::kMaxScore, PolicyKind::kEntropy, PolicyKind::kVote};
  }
  for (const auto& p : cfg.policies) kinds.push_back(parse_policy_kind(p));
  return kinds;
}

void write_run_file(const fs::path& out, const json& description, const std::string& digest) {
  fs::create_directories(out);
  std::ofstream f(out / "run.json", std::ios::trunc);
  if (!f) throw Error(ErrorKind::kIo, "cannot write " + (out / "run.json").string());
  f << json{{"config", description}, {"config_digest", digest}}.dump(2) << '\n';
}

PolicyParams train_params(const ExitLog& val, const BudgetSpec& budget, const RunConfig& cfg, const fs::path& out,
                          const std::string& digest, const std::string& tag) {
  const auto result = train(val, budget, cfg.train);
  fs::create_directories(out);
  write_train_log(result.history, out / ("train_log" + tag + ".jsonl"), digest);
  // Round to checkpoint precision so a reloaded checkpoint reproduces the thresholds.
  return result.params.quantized();
}

Policy make_policy(PolicyKind kind, const ExitLog& val, double budget_value, const RunConfig& cfg,
                   const fs::path& out, const std::string& digest, const std::string& tag) {
  const BudgetSpec budget{budget_value, cfg.alpha, cfg.beta};
  check_budget(budget, val.costs);
  Policy policy;
  if (kind == PolicyKind::kEENet) {
    const PolicyParams params = cfg.checkpoint.empty() ? train_params(val, budget, cfg, out, digest, tag)
                                                       : load_checkpoint(cfg.checkpoint);
    policy = calibrate_eenet(params, val, budget);
  } else {
    policy = calibrate_baseline(kind, val, budget);
  }
  policy.config_digest = digest;
  return policy;
}

int cmd_synth(const RunConfig& cfg, const std::string& digest) {
  const ExitLog log = generate(cfg.synth);
  if (cfg.jsonl) {
    save_log_jsonl(log, cfg.out, digest);
  } else {
    save_log(log, cfg.out, digest);
  }
  std::cout << "wrote " << log.n_samples << " samples (K=" << log.n_exits << ", C=" << log.n_classes << ") to "
            << cfg.out << '\n';
  return kOk;
}

int cmd_train(const RunConfig& cfg, const ExitLog& val, const std::string& digest) {
  const BudgetSpec budget{require_single_budget(cfg), cfg.alpha, cfg.beta};
  check_budget(budget, val.costs);
  const PolicyParams params = train_params(val, budget, cfg, cfg.out, digest, "");
  save_checkpoint(params, fs::path(cfg.out) / "checkpoint", digest);
  std::cout << "wrote " << (fs::path(cfg.out) / "checkpoint.bin").string() << '\n';
  return kOk;
}

int cmd_calibrate(const RunConfig& cfg, const ExitLog& val, const std::string& digest) {
  if (cfg.policies.size() != 1) throw Error(ErrorKind::kUsage, "calibrate needs exactly one --policy");
  const PolicyKind kind = parse_policy_kind(cfg.policies.front());
  const Policy policy = make_policy(kind, val, require_single_budget(cfg), cfg, cfg.out, digest, "");
  save_policy(policy, fs::path(cfg.out) / "policy.json");
  std::cout << "wrote " << (fs::path(cfg.out) / "policy.json").string() << '\n';
  return kOk;
}

int cmd_evaluate(const RunConfig& cfg, const std::optional<ExitLog>& val, const ExitLog& test,
                 const std::string& digest) {
  Policy policy;
  if (!cfg.policy_file.empty()) {
    policy = load_policy(cfg.policy_file);
  } else {
    if (!val) throw Error(ErrorKind::kUsage, "evaluate needs --policy-file or --val with --budget and --policy");
    if (cfg.policies.size() != 1) throw Error(ErrorKind::kUsage, "evaluate needs exactly one --policy");
    policy = make_policy(parse_policy_kind(cfg.policies.front()), *val, require_single_budget(cfg), cfg, cfg.out,
                         digest, "");
    save_policy(policy, fs::path(cfg.out) / "policy.json");
  }
  const EvalReport report = evaluate(policy, test);
  verify_report(report, test);
  const std::vector<EvalReport> reports{report};
  write_reports_csv(reports, fs::path(cfg.out) / "report.csv", digest);
  write_reports_json(reports, fs::path(cfg.out) / "report.json", digest);
  if (cfg.emit_exit_trace) write_exit_trace(report, fs::path(cfg.out) / "exit_trace.csv");
  std::printf("%s budget=%g accuracy=%.4f avg_cost=%.4f%s\n", report.policy.c_str(), report.budget, report.accuracy,
              report.avg_cost, report.overshoot ? " (budget overshoot > 5%)" : "");
  return kOk;
}

std::vector<EvalReport> run_grid(const RunConfig& cfg, const ExitLog& val, const ExitLog& test,
                                 const std::string& digest) {
  if (cfg.budgets.empty()) throw Error(ErrorKind::kUsage, "--budgets is required");
  if (val.n_exits != test.n_exits || val.n_classes != test.n_classes || val.costs != test.costs) {
    throw Error(ErrorKind::kData, "validation and test logs disagree on exits, classes or costs");
  }
  const auto kinds = policy_kinds(cfg);
  for (double b : cfg.budgets) check_budget(BudgetSpec{b, cfg.alpha, cfg.beta}, val.costs);
  const fs::path out(cfg.out);
  std::vector<EvalReport> reports;
  for (double b : cfg.budgets) {
    for (PolicyKind kind : kinds) {
      const std::string tag = std::string("_") + to_string(kind) + "_B" + fmt_budget(b);
      const Policy policy = make_policy(kind, val, b, cfg, out / "training", digest, tag);
      save_policy(policy, out / "policies" / (std::string(to_string(kind)) + "_B" + fmt_budget(b) + ".json"));
      EvalReport report = evaluate(policy, test);
      verify_report(report, test);
      if (cfg.emit_exit_trace) write_exit_trace(report, out / "traces" / (tag.substr(1) + ".csv"));
      std::printf("B=%g %-10s accuracy=%.4f avg_cost=%.4f%s\n", b, report.policy.c_str(), report.accuracy,
                  report.avg_cost, report.overshoot ? " (overshoot)" : "");
      reports.push_back(std::move(report));
    }
  }
  return reports;
}

int cmd_sweep(const RunConfig& cfg, const ExitLog& val, const ExitLog& test, const std::string& digest) {
  const auto reports = run_grid(cfg, val, test, digest);
  write_reports_csv(reports, fs::path(cfg.out) / "sweep.csv", digest);
  write_reports_json(reports, fs::path(cfg.out) / "sweep.json", digest);
  return kOk;
}

int cmd_compare(const RunConfig& cfg, const ExitLog& val, const ExitLog& test, const std::string& digest) {
  const auto reports = run_grid(cfg, val, test, digest);
  write_comparison_csv(reports, fs::path(cfg.out) / "compare.csv", digest);
  write_reports_csv(reports, fs::path(cfg.out) / "reports.csv", digest);
  write_reports_json(reports, fs::path(cfg.out) / "reports.json", digest);
  return kOk;
}

int cmd_ablate(const RunConfig& cfg, const ExitLog& val, const ExitLog& test, const std::string& digest) {
  const BudgetSpec budget{require_single_budget(cfg), cfg.alpha, cfg.beta};
  check_budget(budget, val.costs);
  const PolicyParams params = train_params(val, budget, cfg, cfg.out, digest, "");
  const Ablation a = ablation_variants(params, val, test, budget);
  const std::vector<EvalReport> reports{a.full, a.without_scoring, a.without_distribution};
  for (const auto& r : reports) {
    verify_report(r, test);
    std::printf("%-28s accuracy=%.4f avg_cost=%.4f\n", r.policy.c_str(), r.accuracy, r.avg_cost);
  }
  write_reports_csv(reports, fs::path(cfg.out) / "ablation.csv", digest);
  write_reports_json(reports, fs::path(cfg.out) / "ablation.json", digest);
  return kOk;
}

void apply_preset(RunConfig& cfg, const CLI::App& app) {
  if (cfg.preset != "image" && cfg.preset != "text") {
    throw Error(ErrorKind::kUsage, "--preset must be 'image' or 'text'");
  }
  const bool text = cfg.preset == "text";
  const TrainConfig base = text ? text_preset() : image_preset();
  const BudgetSpec weights = text ? text_budget(0.0) : image_budget(0.0);
  auto unset = [&app](const char* name) { return app.get_option(name)->count() == 0; };
  if (unset("--lr")) cfg.train.learning_rate = base.learning_rate;
  if (unset("--hidden-ratio")) cfg.train.hidden_ratio = base.hidden_ratio;
  if (unset("--alpha")) cfg.alpha = weights.alpha;
  if (unset("--beta")) cfg.beta = weights.beta;
}

void report_error(const char* kind, int code, const std::string& message) {
  std::cerr << json{{"error", kind}, {"code", code}, {"message", message}}.dump() << std::endl;
}

int code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return kBadUsage;
    case ErrorKind::kData: return kDataInvalid;
    case ErrorKind::kIo: return kDataInvalid;
    case ErrorKind::kInfeasible: return kInfeasibleBudget;
  }
  return kInternal;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"exitsched: budgeted early-exit policy optimizer"};
  app.require_subcommand(1);
  app.fallthrough();
  RunConfig cfg;

  app.set_config("--config", "", "TOML or JSON file with option defaults (flags take precedence)");
  for (int i = 1; i + 1 < argc; ++i) {
    const std::string a = argv[i];
    const std::string v = argv[i + 1];
    if (a == "--config" && v.size() >= 5 && v.compare(v.size() - 5, 5, ".json") == 0) {
      app.config_formatter(std::make_shared<JsonConfig>());
    }
  }

  app.add_option("--val", cfg.val, "Validation (calibration) log directory");
  app.add_option("--test", cfg.test, "Test log directory");
  app.add_option("--budget,--budgets", cfg.budgets, "Average per-sample budget(s), comma separated")
      ->delimiter(',');
  app.add_option("--policy,--policies", cfg.policies, "eenet, max_score, entropy, vote (comma separated)")
      ->delimiter(',');
  app.add_option("--policy-file", cfg.policy_file, "Policy JSON written by calibrate");
  app.add_option("--checkpoint", cfg.checkpoint, "EENet checkpoint stem (without .bin)");
  app.add_option("--out", cfg.out, "Output directory");
  app.add_option("--seed", cfg.train.seed, "Seed for every random choice");
  app.add_option("--preset", cfg.preset, "Hyperparameter preset: image or text");
  app.add_option("--alpha", cfg.alpha, "Budget-loss weight");
  app.add_option("--beta", cfg.beta, "Assignment cross-entropy weight");
  app.add_option("--lr", cfg.train.learning_rate, "Adam learning rate");
  app.add_option("--l2", cfg.train.l2_weight, "L2 regularization weight");
  app.add_option("--hidden-ratio", cfg.train.hidden_ratio, "Hidden width as a multiple of the input width");
  app.add_option("--epochs", cfg.train.max_epochs, "Maximum training epochs");
  app.add_option("--patience", cfg.train.patience_epochs, "Early-stopping patience in epochs");
  app.add_option("--batch-size", cfg.train.batch_size, "Minibatch size");
  app.add_option("--holdout", cfg.train.holdout_fraction, "Fraction of the log held out for early stopping");
  app.add_flag("--paper-sign", cfg.train.paper_sign, "Use the literal (unnegated) utility log-likelihood");
  app.add_flag("--detach-b", cfg.train.detach_history, "Stop gradients through earlier utility scores");
  app.add_flag("--emit-exit-trace", cfg.emit_exit_trace, "Write per-sample exit traces");

  app.add_option("--n", cfg.synth.n_samples, "synth: number of samples");
  app.add_option("--k", cfg.synth.n_exits, "synth: number of exits");
  app.add_option("--c", cfg.synth.n_classes, "synth: number of classes");
  app.add_option("--accuracies", cfg.synth.per_exit_accuracy, "synth: per-exit accuracy")->delimiter(',');
  app.add_option("--costs", cfg.synth.costs, "synth: cumulative per-exit costs")->delimiter(',');
  app.add_option("--mix", cfg.synth.difficulty_mix, "synth: fraction of easy samples");
  app.add_option("--concentration", cfg.synth.concentration, "synth: correct-class sharpness");
  app.add_option("--split-name", cfg.synth.split_name, "synth: split name recorded in the manifest");
  app.add_flag("--benchmark", cfg.benchmark, "synth: 4-exit benchmark profile");
  app.add_flag("--jsonl", cfg.jsonl, "synth: write log.jsonl instead of binary tensors");

  const std::vector<std::pair<const char*, const char*>> commands = {
      {"train", "Learn EENet scoring/assignment functions on a validation log"},
      {"calibrate", "Fit per-exit thresholds for one policy and budget"},
      {"evaluate", "Route a test log through a policy"},
      {"sweep", "Calibrate and evaluate policies over a list of budgets"},
      {"ablate", "Compare EENet with its single-component variants"},
      {"synth", "Generate a synthetic prediction log"},
      {"compare", "Accuracy table of several policies across budgets"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", kBadUsage, e.what());
    return kBadUsage;
  }
  cfg.command = app.get_subcommands().front()->get_name();

  try {
    apply_preset(cfg, app);
    if (cfg.command == "synth") {
      if (cfg.benchmark) {
        SynthSpec b = SynthSpec::benchmark(cfg.synth.n_samples, cfg.train.seed);
        b.split_name = cfg.synth.split_name;
        cfg.synth = b;
      }
      cfg.synth.seed = cfg.train.seed;
      return cmd_synth(cfg, digest_of(describe(cfg, std::nullopt, std::nullopt)));
    }

    std::optional<ExitLog> val, test;
    if (!cfg.val.empty()) val = require_log(cfg.val, "--val");
    if (!cfg.test.empty()) test = require_log(cfg.test, "--test");
    for (double b : cfg.budgets) {
      const auto& costs = val ? val->costs : (test ? test->costs : std::vector<double>{});
      if (!costs.empty()) check_budget(BudgetSpec{b, cfg.alpha, cfg.beta}, costs);
    }
    const json description = describe(cfg, val, test);
    const std::string digest = digest_of(description);
    write_run_file(cfg.out, description, digest);

    auto need = [](const std::optional<ExitLog>& log, const char* flag) -> const ExitLog& {
      if (!log) throw Error(ErrorKind::kUsage, std::string(flag) + " is required");
      return *log;
    };
    if (cfg.command == "train") return cmd_train(cfg, need(val, "--val"), digest);
    if (cfg.command == "calibrate") return cmd_calibrate(cfg, need(val, "--val"), digest);
    if (cfg.command == "evaluate") return cmd_evaluate(cfg, val, need(test, "--test"), digest);
    if (cfg.command == "sweep") return cmd_sweep(cfg, need(val, "--val"), need(test, "--test"), digest);
    if (cfg.command == "compare") return cmd_compare(cfg, need(val, "--val"), need(test, "--test"), digest);
    if (cfg.command == "ablate") return cmd_ablate(cfg, need(val, "--val"), need(test, "--test"), digest);
    throw Error(ErrorKind::kUsage, "unknown command " + cfg.command);
  } catch (const Error& e) {
    report_error(to_string(e.kind()), code_for(e.kind()), e.what());
    return code_for(e.kind());
  } catch (const std::exception& e) {
    report_error("internal", kInternal, e.what());
    return kInternal;
  }
}

}  // namespace exitsched::cli
