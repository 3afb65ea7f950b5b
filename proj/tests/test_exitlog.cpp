#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "exitsched/error.hpp"
#include "exitsched/exitlog.hpp"
#include "fixtures.hpp"
#include "json.hpp"

namespace exitsched {
namespace {

using testing::make_log;
using testing::random_log;
using testing::TempDir;

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no exitsched::Error thrown";
  return ErrorKind::kUsage;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

TEST(ExitLog, RoundTripSmall) {
  TempDir dir("roundtrip_small");
  const ExitLog log = random_log(4, 2, 2, 3);
  save_log(log, dir.path());
  const ExitLog back = load_log(dir.path());
  EXPECT_EQ(back.n_samples, 4u);
  EXPECT_EQ(back.n_exits, 2u);
  EXPECT_EQ(back.n_classes, 2u);
  EXPECT_EQ(back, log);
}

TEST(ExitLog, RoundTripJsonl) {
  TempDir dir("roundtrip_jsonl");
  const ExitLog log = random_log(17, 3, 5, 9);
  save_log_jsonl(log, dir.path());
  EXPECT_EQ(load_log(dir.path()), log);
}

TEST(ExitLog, SingleExitIsLegal) {
  TempDir dir("single_exit");
  const ExitLog log = random_log(5, 1, 3, 1);
  save_log(log, dir.path());
  EXPECT_EQ(load_log(dir.path()), log);
}

TEST(ExitLog, EmptySplitRejected) {
  TempDir dir("empty");
  ExitLog log;
  log.n_exits = 2;
  log.n_classes = 2;
  log.costs = {1, 2};
  EXPECT_EQ(kind_of([&] { save_log(log, dir.path()); }), ErrorKind::kData);
  EXPECT_NE(message_of([&] { log.validate(); }).find("empty split"), std::string::npos);
}

TEST(ExitLog, ShapeMismatchFromTruncatedTensor) {
  TempDir dir("shape");
  const ExitLog log = random_log(4, 2, 2, 5);
  save_log(log, dir.path());
  // Drop the last sample's scores: manifest says 4 rows, tensor holds 3.
  std::filesystem::resize_file(dir.path() / "scores.f32", 3 * 2 * 2 * sizeof(float));
  EXPECT_EQ(kind_of([&] { load_log(dir.path()); }), ErrorKind::kData);
  EXPECT_NE(message_of([&] { load_log(dir.path()); }).find("shape mismatch"), std::string::npos);
}

TEST(ExitLog, ProbabilitySumViolationNamesLocation) {
  ExitLog log = make_log({{{0.7f, 0.7f}}, {{0.5f, 0.5f}}}, {0, 1}, {1.0});
  const std::string msg = message_of([&] { log.validate(); });
  EXPECT_NE(msg.find("probability sum"), std::string::npos) << msg;
  EXPECT_NE(msg.find("sample 0"), std::string::npos) << msg;
  EXPECT_NE(msg.find("exit 0"), std::string::npos) << msg;
}

TEST(ExitLog, RejectsBadLabelsAndCosts) {
  ExitLog log = make_log({{{0.5f, 0.5f}, {0.2f, 0.8f}}}, {2}, {1.0, 2.0});
  EXPECT_EQ(kind_of([&] { log.validate(); }), ErrorKind::kData);
  log.labels = {1};
  log.costs = {2.0, 2.0};
  EXPECT_EQ(kind_of([&] { log.validate(); }), ErrorKind::kData);
  log.costs = {1.0, 2.0};
  EXPECT_NO_THROW(log.validate());
}

TEST(ExitLog, MissingDirectoryIsIoError) {
  EXPECT_EQ(kind_of([] { load_log("/nonexistent/exitsched/log"); }), ErrorKind::kIo);
}

TEST(ExitLog, ManifestRecordsDigest) {
  TempDir dir("digest");
  save_log(random_log(3, 2, 2, 1), dir.path(), "abc123");
  std::ifstream in(dir.path() / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("config_digest"), "abc123");
}

TEST(SplitLog, CeilingSizes) {
  const ExitLog log = random_log(10, 2, 3, 11);
  const auto [a, b] = split_log(log, 0.8, 7);
  EXPECT_EQ(a.n_samples, 8u);
  EXPECT_EQ(b.n_samples, 2u);
  const auto [c, d] = split_log(log, 0.75, 7);
  EXPECT_EQ(c.n_samples, 8u);
  EXPECT_EQ(d.n_samples, 2u);
}

TEST(SplitLog, DeterministicPartition) {
  const ExitLog log = random_log(50, 3, 4, 2);
  const auto first = split_log(log, 0.8, 7);
  const auto second = split_log(log, 0.8, 7);
  EXPECT_EQ(first.first, second.first);
  EXPECT_EQ(first.second, second.second);
  const auto other = split_log(log, 0.8, 8);
  EXPECT_NE(first.first.labels == other.first.labels && first.first.scores == other.first.scores, true);
}

TEST(SplitLog, UnionIsInput) {
  const ExitLog log = random_log(37, 2, 3, 4);
  const auto [a, b] = split_log(log, 0.6, 1);
  // Identify samples by their score rows, which are distinct with probability one.
  auto rows = [](const ExitLog& l) {
    std::multiset<std::vector<float>> out;
    for (std::size_t n = 0; n < l.n_samples; ++n) {
      const auto s = l.sample(n);
      out.emplace(s.begin(), s.end());
    }
    return out;
  };
  auto all = rows(a);
  for (auto& r : rows(b)) all.insert(r);
  EXPECT_EQ(all, rows(log));
}

TEST(SplitLog, RejectsDegenerateInputs) {
  const ExitLog log = random_log(10, 2, 3, 4);
  EXPECT_EQ(kind_of([&] { split_log(log, 0.0, 1); }), ErrorKind::kUsage);
  EXPECT_EQ(kind_of([&] { split_log(log, 1.0, 1); }), ErrorKind::kUsage);
  EXPECT_EQ(kind_of([&] { split_log(random_log(1, 2, 3, 4), 0.5, 1); }), ErrorKind::kData);
}

TEST(Budget, CheckRange) {
  const std::vector<double> costs{1, 2, 4};
  EXPECT_NO_THROW(check_budget({1.0}, costs));
  EXPECT_NO_THROW(check_budget({4.0}, costs));
  EXPECT_EQ(kind_of([&] { check_budget({0.5}, costs); }), ErrorKind::kInfeasible);
  EXPECT_EQ(kind_of([&] { check_budget({4.5}, costs); }), ErrorKind::kInfeasible);
}

TEST(LogDigest, SensitiveToContent) {
  ExitLog log = random_log(5, 2, 3, 4);
  const std::string d = log_digest(log);
  EXPECT_EQ(d.size(), 16u);
  EXPECT_EQ(d, log_digest(random_log(5, 2, 3, 4)));
  log.labels[0] = (log.labels[0] + 1) % 3;
  EXPECT_NE(d, log_digest(log));
}

}  // namespace
}  // namespace exitsched
