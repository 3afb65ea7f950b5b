#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "exitsched/error.hpp"
#include "exitsched/policy_net.hpp"
#include "fixtures.hpp"

namespace exitsched {
namespace {

using testing::random_log;
using testing::TempDir;

struct Outputs {
  std::vector<double> q, r;
};

// Second forward pass written without the library's helpers: plain loops over the
// flat weight vector, confidences recomputed inline.
// With `frozen_q` the utilities fed to later exits are taken from it instead.
Outputs oracle_forward(const std::vector<double>& w, const std::vector<std::size_t>& hidden, std::size_t C,
                       const std::vector<double>& probs, const std::vector<double>* frozen_q = nullptr) {
  const std::size_t K = hidden.size();
  Outputs out;
  std::vector<double> logits;
  std::vector<int> votes(C, 0);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const double* p = probs.data() + k * C;
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (p[c] > p[best]) best = c;
    }
    votes[best] += 1;
    double plogp = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (p[c] > 0) plogp += p[c] * std::log(p[c]);
    }
    std::vector<double> x(p, p + C);
    x.push_back(p[best]);
    x.push_back(1.0 + plogp / std::log(double(C)));
    x.push_back(double(*std::max_element(votes.begin(), votes.end())) / double(k + 1));
    for (std::size_t j = 0; j < k; ++j) x.push_back(frozen_q ? (*frozen_q)[j] : out.q[j]);
    const std::size_t D = x.size(), H = hidden[k];
    std::vector<double> s(H);
    for (std::size_t r = 0; r < H; ++r) {
      double z = 0;
      for (std::size_t i = 0; i < D; ++i) z += w[pos + r * D + i] * x[i];
      s[r] = z > 0 ? z : 0.01 * z;
    }
    pos += H * D;
    double g = 0, h = 0;
    for (std::size_t r = 0; r < H; ++r) g += w[pos + r] * s[r];
    pos += H;
    for (std::size_t r = 0; r < H; ++r) h += w[pos + r] * s[r];
    pos += H;
    out.q.push_back(1.0 / (1.0 + std::exp(-g)));
    logits.push_back(h);
  }
  double z = 0;
  for (double l : logits) z += std::exp(l);
  for (double l : logits) out.r.push_back(std::exp(l) / z);
  return out;
}

TEST(PolicyNet, ZeroWeightsGiveHalfAndUniform) {
  const PolicyParams params(3, 4, {2, 2, 2});
  const ExitLog log = random_log(1, 3, 4, 1);
  const auto out = forward(params, log.sample(0));
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(out.q_hat[k], 0.5);
    EXPECT_NEAR(out.r_hat[k], 1.0 / 3.0, 1e-15);
  }
}

TEST(PolicyNet, SingleExitShapes) {
  const auto params = PolicyParams::initialize(1, 5, 0.5, 1);
  EXPECT_EQ(params.input_dim(0), 8u);
  EXPECT_EQ(params.hidden_dim(0), 4u);
  const auto out = forward(params, random_log(1, 1, 5, 2).sample(0));
  EXPECT_EQ(out.q_hat.size(), 1u);
  EXPECT_EQ(out.r_hat.size(), 1u);
  EXPECT_EQ(out.r_tilde.size(), 1u);
  EXPECT_EQ(out.r_hat[0], 1.0);
}

TEST(PolicyNet, HiddenWidths) {
  const auto params = PolicyParams::initialize(4, 10, 0.5, 0);
  // D_k = 13, 14, 15, 16
  EXPECT_EQ(params.hidden_dims(), (std::vector<std::size_t>{7, 7, 8, 8}));
  const auto tiny = PolicyParams::initialize(2, 2, 0.01, 0);
  EXPECT_EQ(tiny.hidden_dims(), (std::vector<std::size_t>{1, 1}));
}

TEST(PolicyNet, MatchesStraightLineOracle) {
  const auto params = PolicyParams::initialize(4, 6, 1.5, 42);
  const ExitLog log = random_log(20, 4, 6, 42);
  const std::vector<double> w(params.weights().begin(), params.weights().end());
  for (std::size_t n = 0; n < log.n_samples; ++n) {
    const auto s = log.sample(n);
    const auto expect = oracle_forward(w, params.hidden_dims(), 6, std::vector<double>(s.begin(), s.end()));
    const auto got = forward(params, s);
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_NEAR(got.q_hat[k], expect.q[k], 1e-10);
      EXPECT_NEAR(got.r_hat[k], expect.r[k], 1e-10);
    }
  }
}

TEST(PolicyNet, AssignmentIsDistribution) {
  auto params = PolicyParams::initialize(5, 3, 2.0, 9);
  for (double& v : params.weights()) v *= 10.0;  // large logits
  const ExitLog log = random_log(50, 5, 3, 9);
  for (std::size_t n = 0; n < log.n_samples; ++n) {
    const auto out = forward(params, log.sample(n));
    double s = 0;
    for (double r : out.r_hat) {
      EXPECT_GE(r, 0.0);
      s += r;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(PolicyNet, InitializationIsSeeded) {
  EXPECT_EQ(PolicyParams::initialize(3, 4, 0.5, 11), PolicyParams::initialize(3, 4, 0.5, 11));
  EXPECT_NE(PolicyParams::initialize(3, 4, 0.5, 11), PolicyParams::initialize(3, 4, 0.5, 12));
  const auto p = PolicyParams::initialize(3, 4, 0.5, 11);
  for (std::size_t k = 0; k < 3; ++k) {
    const double limit = std::sqrt(6.0 / double(p.input_dim(k) + p.hidden_dim(k)));
    for (double v : p.shared(k)) EXPECT_LE(std::abs(v), limit);
  }
}

// Scalar test function of the outputs: sum_k a_k q_k + b_k r_k.
double probe(const Outputs& out, const std::vector<double>& a, const std::vector<double>& b) {
  double v = 0;
  for (std::size_t k = 0; k < a.size(); ++k) v += a[k] * out.q[k] + b[k] * out.r[k];
  return v;
}

// Detached backward is the derivative with earlier utilities held at their
// unperturbed values, which the oracle reproduces through frozen_q.
void check_backward_against_fd(bool detach) {
  const auto params = PolicyParams::initialize(3, 4, 1.0, 5);
  const ExitLog log = random_log(1, 3, 4, 6);
  const auto s = log.sample(0);
  const std::vector<double> probs(s.begin(), s.end());
  const std::vector<double> a{0.3, -1.2, 0.8}, b{1.1, 0.4, -0.7};
  const std::vector<double> zero(3, 0.0);
  ForwardTrace trace;
  forward(params, s, trace);
  std::vector<double> grad(params.weights().size(), 0.0);
  backward(params, trace, {a, b, zero}, detach, grad);

  const std::vector<double> q0 = trace.out.q_hat;
  std::vector<double> w(params.weights().begin(), params.weights().end());
  const double h = 1e-5;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double saved = w[i];
    w[i] = saved + h;
    const double up = probe(oracle_forward(w, params.hidden_dims(), 4, probs, detach ? &q0 : nullptr), a, b);
    w[i] = saved - h;
    const double down = probe(oracle_forward(w, params.hidden_dims(), 4, probs, detach ? &q0 : nullptr), a, b);
    w[i] = saved;
    const double fd = (up - down) / (2 * h);
    EXPECT_NEAR(grad[i], fd, 1e-4 * std::max(1.0, std::abs(fd))) << "weight " << i;
  }
}

TEST(PolicyNet, BackwardMatchesFiniteDifferences) { check_backward_against_fd(false); }

TEST(PolicyNet, DetachedBackwardMatchesFrozenHistory) { check_backward_against_fd(true); }

TEST(PolicyNet, ZeroSeedsGiveZeroGradient) {
  const auto params = PolicyParams::initialize(3, 4, 1.0, 5);
  const ExitLog log = random_log(4, 3, 4, 6);
  const std::vector<std::size_t> batch{0, 1, 2, 3};
  const std::vector<double> zeros(12, 0.0);
  const auto g = backward_batch(params, log, batch, zeros, zeros);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(PolicyNet, DuplicateSampleDoublesGradient) {
  const auto params = PolicyParams::initialize(3, 4, 1.0, 5);
  const ExitLog log = random_log(2, 3, 4, 6);
  const std::vector<double> seeds{0.5, -0.2, 0.1, 0.3, 0.9, -0.4};
  const std::vector<double> once_q(seeds.begin(), seeds.begin() + 3), once_r(seeds.begin() + 3, seeds.end());
  std::vector<double> twice_q = once_q, twice_r = once_r;
  twice_q.insert(twice_q.end(), once_q.begin(), once_q.end());
  twice_r.insert(twice_r.end(), once_r.begin(), once_r.end());
  const std::vector<std::size_t> one{1}, two{1, 1};
  const auto g1 = backward_batch(params, log, one, once_q, once_r);
  const auto g2 = backward_batch(params, log, two, twice_q, twice_r);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g2[i], 2 * g1[i], 1e-15 + 1e-12 * std::abs(g1[i]));
}

TEST(Checkpoint, RoundTripOfQuantizedWeights) {
  TempDir dir("checkpoint");
  const auto params = PolicyParams::initialize(3, 5, 0.5, 17).quantized();
  save_checkpoint(params, dir.path() / "ckpt", "d1");
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "ckpt.bin"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "ckpt.json"));
  const auto back = load_checkpoint(dir.path() / "ckpt");
  EXPECT_EQ(back.weights().size(), params.weights().size());
  EXPECT_TRUE(std::equal(back.weights().begin(), back.weights().end(), params.weights().begin()));
  EXPECT_EQ(back.hidden_dims(), params.hidden_dims());
}

TEST(Checkpoint, CorruptFileRejected) {
  TempDir dir("checkpoint_bad");
  save_checkpoint(PolicyParams::initialize(2, 3, 0.5, 1), dir.path() / "c");
  std::filesystem::resize_file(dir.path() / "c.bin", 10);
  EXPECT_THROW(load_checkpoint(dir.path() / "c"), Error);
}

}  // namespace
}  // namespace exitsched
