#include "exitsched/exitlog.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "exitsched/error.hpp"
#include "exitsched/util.hpp"
#include "json.hpp"

namespace exitsched {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kProbSumTol = 1e-4;

[[noreturn]] void data_error(const std::string& msg) { throw Error(ErrorKind::kData, msg); }

template <typename T>
T to_little_endian(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
std::vector<T> read_binary(const fs::path& file, std::size_t expected_count) {
  std::ifstream in(file, std::ios::binary | std::ios::ate);
  if (!in) throw Error(ErrorKind::kIo, "missing file: " + file.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected_count * sizeof(T)) {
    data_error("shape mismatch: " + file.filename().string() + " holds " + std::to_string(bytes) +
               " bytes, manifest implies " + std::to_string(expected_count * sizeof(T)));
  }
  std::vector<T> out(expected_count);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  for (auto& v : out) v = to_little_endian(v);
  return out;
}

template <typename T>
void write_binary(const fs::path& file, std::span<const T> values) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + file.string());
  for (T v : values) {
    T le = to_little_endian(v);
    out.write(reinterpret_cast<const char*>(&le), sizeof(T));
  }
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + file.string());
}

json read_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::kIo, "missing file: " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    data_error(file.filename().string() + ": " + e.what());
  }
}

json manifest_of(const ExitLog& log, const std::string& config_digest) {
  json m{{"format_version", kLogFormatVersion},
              {"n_samples", log.n_samples},
              {"n_exits", log.n_exits},
              {"n_classes", log.n_classes},
              {"costs", log.costs},
              {"split_name", log.split_name}};
  if (!config_digest.empty()) m["config_digest"] = config_digest;
  return m;
}

void prepare_dir(const ExitLog& log, const fs::path& dir, const std::string& config_digest) {
  log.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + (dir / "manifest.json").string());
  out << manifest_of(log, config_digest).dump(2) << '\n';
}

}  // namespace

void ExitLog::validate() const {
  if (n_samples == 0) data_error("empty split: n_samples = 0");
  if (n_exits == 0) data_error("n_exits must be >= 1");
  if (n_classes == 0) data_error("n_classes must be >= 1");
  if (scores.size() != n_samples * n_exits * n_classes) data_error("shape mismatch: scores size");
  if (labels.size() != n_samples) data_error("shape mismatch: labels size");
  if (costs.size() != n_exits) data_error("shape mismatch: costs has " + std::to_string(costs.size()) +
                                          " entries, expected " + std::to_string(n_exits));
  for (std::size_t k = 0; k < n_exits; ++k) {
    if (!std::isfinite(costs[k])) data_error("non-finite cost at exit " + std::to_string(k));
    if (k > 0 && !(costs[k] > costs[k - 1])) {
      data_error("costs must be strictly increasing (exit " + std::to_string(k) + ")");
    }
  }
  for (std::size_t n = 0; n < n_samples; ++n) {
    if (labels[n] >= n_classes) {
      data_error("label out of range at sample " + std::to_string(n) + ": " + std::to_string(labels[n]));
    }
    for (std::size_t k = 0; k < n_exits; ++k) {
      double sum = 0.0;
      for (float p : probs(n, k)) {
        if (std::isnan(p) || p < 0.0f) {
          data_error("invalid probability (NaN or negative) at sample " + std::to_string(n) + ", exit " +
                     std::to_string(k));
        }
        sum += p;
      }
      if (std::abs(sum - 1.0) > kProbSumTol) {
        std::ostringstream msg;
        msg << "probability sum violation at sample " << n << ", exit " << k << " (sum=" << sum << ")";
        data_error(msg.str());
      }
    }
  }
}

void check_budget(const BudgetSpec& budget, std::span<const double> costs) {
  if (costs.empty()) throw Error(ErrorKind::kData, "no exit costs");
  if (!(budget.budget >= costs.front() && budget.budget <= costs.back())) {
    std::ostringstream msg;
    msg << "budget " << budget.budget << " outside [" << costs.front() << ", " << costs.back() << "]";
    throw Error(ErrorKind::kInfeasible, msg.str());
  }
  if (!(budget.alpha > 0.0) || !(budget.beta > 0.0)) {
    throw Error(ErrorKind::kUsage, "alpha and beta must be positive");
  }
}

ExitLog load_log(const fs::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  ExitLog log;
  try {
    if (manifest.at("format_version").get<int>() != kLogFormatVersion) {
      data_error("unsupported format_version " + manifest.at("format_version").dump());
    }
    log.n_samples = manifest.at("n_samples").get<std::size_t>();
    log.n_exits = manifest.at("n_exits").get<std::size_t>();
    log.n_classes = manifest.at("n_classes").get<std::size_t>();
    log.costs = manifest.at("costs").get<std::vector<double>>();
    log.split_name = manifest.value("split_name", std::string{});
  } catch (const json::exception& e) {
    data_error(std::string("manifest.json: ") + e.what());
  }
  if (log.n_samples == 0) data_error("empty split: n_samples = 0");

  const std::size_t n_scores = log.n_samples * log.n_exits * log.n_classes;
  if (fs::exists(dir / "scores.f32")) {
    log.scores = read_binary<float>(dir / "scores.f32", n_scores);
    log.labels = read_binary<std::uint32_t>(dir / "labels.u32", log.n_samples);
  } else if (fs::exists(dir / "log.jsonl")) {
    std::ifstream in(dir / "log.jsonl");
    log.scores.reserve(n_scores);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        const json rec = json::parse(line);
        const auto rows = rec.at("scores").get<std::vector<std::vector<float>>>();
        if (rows.size() != log.n_exits) data_error("shape mismatch: record " + std::to_string(row) + " exits");
        for (const auto& r : rows) {
          if (r.size() != log.n_classes) data_error("shape mismatch: record " + std::to_string(row) + " classes");
          log.scores.insert(log.scores.end(), r.begin(), r.end());
        }
        log.labels.push_back(rec.at("label").get<std::uint32_t>());
      } catch (const json::exception& e) {
        data_error("log.jsonl record " + std::to_string(row) + ": " + e.what());
      }
      ++row;
    }
    if (row != log.n_samples) {
      data_error("shape mismatch: log.jsonl holds " + std::to_string(row) + " records, manifest says " +
                 std::to_string(log.n_samples));
    }
  } else {
    throw Error(ErrorKind::kIo, "missing file: " + (dir / "scores.f32").string());
  }
  log.validate();
  return log;
}

void save_log(const ExitLog& log, const fs::path& dir, const std::string& config_digest) {
  prepare_dir(log, dir, config_digest);
  write_binary<float>(dir / "scores.f32", log.scores);
  write_binary<std::uint32_t>(dir / "labels.u32", log.labels);
}

void save_log_jsonl(const ExitLog& log, const fs::path& dir, const std::string& config_digest) {
  prepare_dir(log, dir, config_digest);
  std::ofstream out(dir / "log.jsonl", std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + (dir / "log.jsonl").string());
  for (std::size_t n = 0; n < log.n_samples; ++n) {
    json rows = json::array();
    for (std::size_t k = 0; k < log.n_exits; ++k) {
      auto p = log.probs(n, k);
      rows.push_back(std::vector<float>(p.begin(), p.end()));
    }
    out << json{{"label", log.labels[n]}, {"scores", rows}}.dump() << '\n';
  }
}

ExitLog subset(const ExitLog& log, std::span<const std::size_t> indices) {
  ExitLog out;
  out.n_samples = indices.size();
  out.n_exits = log.n_exits;
  out.n_classes = log.n_classes;
  out.costs = log.costs;
  out.split_name = log.split_name;
  out.scores.reserve(indices.size() * log.n_exits * log.n_classes);
  out.labels.reserve(indices.size());
  for (std::size_t idx : indices) {
    auto row = log.sample(idx);
    out.scores.insert(out.scores.end(), row.begin(), row.end());
    out.labels.push_back(log.labels[idx]);
  }
  return out;
}

std::pair<ExitLog, ExitLog> split_log(const ExitLog& log, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorKind::kUsage, "split fraction must be in (0, 1)");
  }
  if (log.n_samples < 2) data_error("split needs at least 2 samples");
  std::vector<std::size_t> order(log.n_samples);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto first = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(log.n_samples) - 1e-9));
  if (first == 0 || first >= log.n_samples) data_error("split leaves an empty part");
  std::vector<std::size_t> a(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first));
  std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(first), order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  ExitLog left = subset(log, a);
  ExitLog right = subset(log, b);
  left.split_name = log.split_name + "/a";
  right.split_name = log.split_name + "/b";
  return {std::move(left), std::move(right)};
}

std::string log_digest(const ExitLog& log) {
  Fnv1a h;
  const std::uint64_t dims[3] = {log.n_samples, log.n_exits, log.n_classes};
  h.update(dims, sizeof(dims));
  h.update_span<double>(log.costs);
  h.update_span<float>(log.scores);
  h.update_span<std::uint32_t>(log.labels);
  return h.hex();
}

}  // namespace exitsched
