#include "exitsched/policy_net.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "exitsched/confidence.hpp"
#include "exitsched/error.hpp"
#include "exitsched/util.hpp"
#include "json.hpp"

namespace exitsched {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic = {'E', 'X', 'S', 'P'};

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double leaky_relu(double z) { return z > 0.0 ? z : kLeakySlope * z; }

void check_dims(const PolicyParams& params, std::size_t sample_size) {
  if (params.n_exits() == 0 || sample_size != params.n_exits() * params.n_classes()) {
    throw Error(ErrorKind::kData, "dimension mismatch: policy expects K=" + std::to_string(params.n_exits()) +
                                      ", C=" + std::to_string(params.n_classes()) + " but sample has " +
                                      std::to_string(sample_size) + " scores");
  }
}

template <typename T>
void put(std::ostream& out, T v) {
  // Checkpoints are written on little-endian hosts only.
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorKind::kData, "checkpoint truncated");
  return v;
}

}  // namespace

PolicyParams::PolicyParams(std::size_t n_exits, std::size_t n_classes, std::vector<std::size_t> hidden_dims,
                           double hidden_ratio, std::uint64_t seed)
    : n_classes_(n_classes), hidden_dims_(std::move(hidden_dims)), hidden_ratio_(hidden_ratio), seed_(seed) {
  if (hidden_dims_.size() != n_exits) throw Error(ErrorKind::kUsage, "hidden_dims must have one entry per exit");
  std::size_t total = 0;
  offsets_.reserve(n_exits);
  for (std::size_t k = 0; k < n_exits; ++k) {
    if (hidden_dims_[k] == 0) throw Error(ErrorKind::kUsage, "hidden width must be >= 1");
    offsets_.push_back(total);
    total += hidden_dims_[k] * (input_dim(k) + 2);
  }
  weights_.assign(total, 0.0);
}

PolicyParams PolicyParams::initialize(std::size_t n_exits, std::size_t n_classes, double hidden_ratio,
                                      std::uint64_t seed) {
  if (!(hidden_ratio > 0.0)) throw Error(ErrorKind::kUsage, "hidden ratio must be positive");
  std::vector<std::size_t> dims(n_exits);
  for (std::size_t k = 0; k < n_exits; ++k) {
    const double d = static_cast<double>(exit_input_dim(n_classes, k));
    dims[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(hidden_ratio * d)));
  }
  PolicyParams p(n_exits, n_classes, std::move(dims), hidden_ratio, seed);
  Rng rng(seed);
  auto fill = [&rng](std::span<double> w, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w) v = (2.0 * uniform01(rng) - 1.0) * bound;
  };
  for (std::size_t k = 0; k < n_exits; ++k) {
    fill(p.shared(k), p.input_dim(k), p.hidden_dim(k));
    fill(p.utility(k), p.hidden_dim(k), 1);
    fill(p.assignment(k), p.hidden_dim(k), 1);
  }
  return p;
}

PolicyParams PolicyParams::quantized() const {
  PolicyParams out = *this;
  for (double& w : out.weights_) w = static_cast<double>(static_cast<float>(w));
  return out;
}

void forward(const PolicyParams& params, std::span<const float> sample_scores, ForwardTrace& trace) {
  check_dims(params, sample_scores.size());
  const std::size_t K = params.n_exits();
  const std::size_t C = params.n_classes();
  std::size_t in_total = 0, hid_total = 0;
  for (std::size_t k = 0; k < K; ++k) {
    in_total += params.input_dim(k);
    hid_total += params.hidden_dim(k);
  }
  trace.inputs.resize(in_total);
  trace.preact.resize(hid_total);
  trace.hidden.resize(hid_total);
  trace.out.q_hat.resize(K);
  trace.out.r_tilde.resize(K);
  trace.out.r_hat.resize(K);

  const auto conf = confidence_profile(sample_scores, K, C);
  std::size_t in_off = 0, hid_off = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t D = params.input_dim(k);
    const std::size_t H = params.hidden_dim(k);
    double* x = trace.inputs.data() + in_off;
    for (std::size_t c = 0; c < C; ++c) x[c] = static_cast<double>(sample_scores[k * C + c]);
    x[C] = conf[k].max;
    x[C + 1] = conf[k].entropy;
    x[C + 2] = conf[k].vote;
    for (std::size_t j = 0; j < k; ++j) x[C + 3 + j] = trace.out.q_hat[j];

    const auto W = params.shared(k);
    const auto wg = params.utility(k);
    const auto wh = params.assignment(k);
    double g = 0.0, h = 0.0;
    for (std::size_t r = 0; r < H; ++r) {
      double z = 0.0;
      for (std::size_t i = 0; i < D; ++i) z += W[r * D + i] * x[i];
      const double s = leaky_relu(z);
      trace.preact[hid_off + r] = z;
      trace.hidden[hid_off + r] = s;
      g += wg[r] * s;
      h += wh[r] * s;
    }
    trace.out.q_hat[k] = sigmoid(g);
    trace.out.r_tilde[k] = h;
    in_off += D;
    hid_off += H;
  }

  const double top = *std::max_element(trace.out.r_tilde.begin(), trace.out.r_tilde.end());
  double denom = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    trace.out.r_hat[k] = std::exp(trace.out.r_tilde[k] - top);
    denom += trace.out.r_hat[k];
  }
  for (double& r : trace.out.r_hat) r /= denom;
}

ExitScores forward(const PolicyParams& params, std::span<const float> sample_scores) {
  ForwardTrace trace;
  forward(params, sample_scores, trace);
  return std::move(trace.out);
}

void backward(const PolicyParams& params, const ForwardTrace& trace, const ExitSeeds& seeds, bool detach_history,
              std::span<double> grad) {
  const std::size_t K = params.n_exits();
  const std::size_t C = params.n_classes();
  const auto& out = trace.out;

  std::vector<double> d_q(K, 0.0), d_rt(K, 0.0);
  if (!seeds.d_q_hat.empty()) std::copy(seeds.d_q_hat.begin(), seeds.d_q_hat.end(), d_q.begin());
  if (!seeds.d_r_tilde.empty()) std::copy(seeds.d_r_tilde.begin(), seeds.d_r_tilde.end(), d_rt.begin());
  if (!seeds.d_r_hat.empty()) {
    double dot = 0.0;
    for (std::size_t k = 0; k < K; ++k) dot += seeds.d_r_hat[k] * out.r_hat[k];
    for (std::size_t k = 0; k < K; ++k) d_rt[k] += out.r_hat[k] * (seeds.d_r_hat[k] - dot);
  }

  std::size_t in_off = trace.inputs.size();
  std::size_t hid_off = trace.hidden.size();
  std::vector<double> d_z;
  // Later exits first so that d_q[k] is complete (it receives terms through b) before use.
  for (std::size_t kk = K; kk-- > 0;) {
    const std::size_t D = params.input_dim(kk);
    const std::size_t H = params.hidden_dim(kk);
    in_off -= D;
    hid_off -= H;
    const double* x = trace.inputs.data() + in_off;
    const double* z = trace.preact.data() + hid_off;
    const double* s = trace.hidden.data() + hid_off;

    const double q = out.q_hat[kk];
    const double d_logit = d_q[kk] * q * (1.0 - q);
    const double d_assign = d_rt[kk];
    const auto W = params.shared(kk);
    const auto wg = params.utility(kk);
    const auto wh = params.assignment(kk);
    const std::size_t base = params.offset(kk);
    double* gW = grad.data() + base;
    double* gg = gW + H * D;
    double* gh = gg + H;

    d_z.assign(H, 0.0);
    for (std::size_t r = 0; r < H; ++r) {
      gg[r] += d_logit * s[r];
      gh[r] += d_assign * s[r];
      const double ds = wg[r] * d_logit + wh[r] * d_assign;
      d_z[r] = ds * (z[r] > 0.0 ? 1.0 : kLeakySlope);
    }
    for (std::size_t r = 0; r < H; ++r) {
      if (d_z[r] == 0.0) continue;
      for (std::size_t i = 0; i < D; ++i) gW[r * D + i] += d_z[r] * x[i];
    }
    if (!detach_history) {
      for (std::size_t j = 0; j < kk; ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < H; ++r) acc += W[r * D + C + 3 + j] * d_z[r];
        d_q[j] += acc;
      }
    }
  }
}

std::vector<double> backward_batch(const PolicyParams& params, const ExitLog& log, std::span<const std::size_t> batch,
                                   std::span<const double> d_q_hat, std::span<const double> d_r_hat,
                                   bool detach_history) {
  const std::size_t K = params.n_exits();
  if (d_q_hat.size() != batch.size() * K || d_r_hat.size() != batch.size() * K) {
    throw Error(ErrorKind::kUsage, "seed blocks must be [batch][K]");
  }
  std::vector<double> grad(params.weights().size(), 0.0);
  ForwardTrace trace;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    forward(params, log.sample(batch[b]), trace);
    backward(params, trace, {d_q_hat.subspan(b * K, K), d_r_hat.subspan(b * K, K), {}}, detach_history, grad);
  }
  return grad;
}

void save_checkpoint(const PolicyParams& params, const fs::path& stem, const std::string& config_digest) {
  fs::path bin = stem;
  bin += ".bin";
  fs::path meta = stem;
  meta += ".json";
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  {
    std::ofstream out(bin, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + bin.string());
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.n_exits()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.n_classes()));
    for (std::size_t h : params.hidden_dims()) put<std::uint32_t>(out, static_cast<std::uint32_t>(h));
    put<std::uint64_t>(out, params.weights().size());
    for (double w : params.weights()) put<float>(out, static_cast<float>(w));
    if (!out) throw Error(ErrorKind::kIo, "write failed: " + bin.string());
  }
  Fnv1a digest;
  for (double w : params.weights()) {
    const float f = static_cast<float>(w);
    digest.update(&f, sizeof(f));
  }
  nlohmann::json j{{"format_version", kCheckpointVersion},
                         {"n_exits", params.n_exits()},
                         {"n_classes", params.n_classes()},
                         {"hidden_dims", params.hidden_dims()},
                         {"hidden_ratio", params.hidden_ratio()},
                         {"seed", params.seed()},
                         {"weights_file", bin.filename().string()},
                         {"weights_digest", digest.hex()}};
  if (!config_digest.empty()) j["config_digest"] = config_digest;
  std::ofstream out(meta, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + meta.string());
  out << j.dump(2) << '\n';
}

PolicyParams load_checkpoint(const fs::path& stem) {
  fs::path bin = stem;
  bin += ".bin";
  fs::path meta = stem;
  meta += ".json";
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "missing file: " + bin.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error(ErrorKind::kData, "not a policy checkpoint: " + bin.string());
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw Error(ErrorKind::kData, "unsupported checkpoint version");
  const std::size_t K = get<std::uint32_t>(in);
  const std::size_t C = get<std::uint32_t>(in);
  std::vector<std::size_t> dims(K);
  for (auto& d : dims) d = get<std::uint32_t>(in);

  double ratio = 0.0;
  std::uint64_t seed = 0;
  if (std::ifstream mj(meta); mj) {
    try {
      const auto j = nlohmann::json::parse(mj);
      ratio = j.value("hidden_ratio", 0.0);
      seed = j.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kData, std::string("checkpoint metadata: ") + e.what());
    }
  }
  PolicyParams p(K, C, std::move(dims), ratio, seed);
  const auto count = get<std::uint64_t>(in);
  if (count != p.weights().size()) throw Error(ErrorKind::kData, "checkpoint weight count does not match header");
  for (double& w : p.weights()) {
    const float f = get<float>(in);
    if (!std::isfinite(f)) throw Error(ErrorKind::kData, "non-finite weight in checkpoint");
    w = static_cast<double>(f);
  }
  return p;
}

}  // namespace exitsched
