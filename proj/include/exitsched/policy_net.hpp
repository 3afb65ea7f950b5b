#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "exitsched/exitlog.hpp"

namespace exitsched {

inline constexpr double kLeakySlope = 0.01;

/// Input width of exit k (0-based): C probabilities, 3 confidences, k earlier utilities.
inline std::size_t exit_input_dim(std::size_t n_classes, std::size_t k) { return n_classes + 3 + k; }

/// Weights of the per-exit scorer: a shared leaky-ReLU layer followed by a sigmoid
/// utility head and a linear assignment head. No biases.
///
/// All weights live in one flat vector so optimizers and gradient checks can treat
/// them uniformly; shared(k), utility(k) and assignment(k) view into it.
class PolicyParams {
 public:
  PolicyParams() = default;

  /// Zero weights with the given hidden widths.
  PolicyParams(std::size_t n_exits, std::size_t n_classes, std::vector<std::size_t> hidden_dims,
               double hidden_ratio = 0.0, std::uint64_t seed = 0);

  /// Hidden width max(1, round(ratio * D_k)) per exit, Glorot-uniform weights.
  static PolicyParams initialize(std::size_t n_exits, std::size_t n_classes, double hidden_ratio,
                                 std::uint64_t seed);

  std::size_t n_exits() const { return hidden_dims_.size(); }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t input_dim(std::size_t k) const { return exit_input_dim(n_classes_, k); }
  std::size_t hidden_dim(std::size_t k) const { return hidden_dims_[k]; }
  const std::vector<std::size_t>& hidden_dims() const { return hidden_dims_; }
  double hidden_ratio() const { return hidden_ratio_; }
  std::uint64_t seed() const { return seed_; }

  /// Row-major [hidden_dim(k)][input_dim(k)].
  std::span<double> shared(std::size_t k) { return {weights_.data() + offsets_[k], shared_size(k)}; }
  std::span<const double> shared(std::size_t k) const { return {weights_.data() + offsets_[k], shared_size(k)}; }
  std::span<double> utility(std::size_t k) { return {weights_.data() + offsets_[k] + shared_size(k), hidden_dims_[k]}; }
  std::span<const double> utility(std::size_t k) const {
    return {weights_.data() + offsets_[k] + shared_size(k), hidden_dims_[k]};
  }
  std::span<double> assignment(std::size_t k) {
    return {weights_.data() + offsets_[k] + shared_size(k) + hidden_dims_[k], hidden_dims_[k]};
  }
  std::span<const double> assignment(std::size_t k) const {
    return {weights_.data() + offsets_[k] + shared_size(k) + hidden_dims_[k], hidden_dims_[k]};
  }

  /// Offset of exit k's block inside weights(); the same layout indexes gradients.
  std::size_t offset(std::size_t k) const { return offsets_[k]; }
  std::span<double> weights() { return weights_; }
  std::span<const double> weights() const { return weights_; }

  /// Copy with every weight rounded to single precision, i.e. what a checkpoint stores.
  PolicyParams quantized() const;

  bool operator==(const PolicyParams&) const = default;

 private:
  std::size_t shared_size(std::size_t k) const { return hidden_dims_[k] * input_dim(k); }

  std::size_t n_classes_ = 0;
  std::vector<std::size_t> hidden_dims_;
  std::vector<std::size_t> offsets_;
  std::vector<double> weights_;
  double hidden_ratio_ = 0.0;
  std::uint64_t seed_ = 0;
};

/// Per-exit utility q_hat, assignment logits r_tilde and their softmax r_hat.
struct ExitScores {
  std::vector<double> q_hat;
  std::vector<double> r_hat;
  std::vector<double> r_tilde;
};

/// Intermediates of one forward pass, kept for backward().
struct ForwardTrace {
  std::vector<double> inputs;   // concatenated x_k
  std::vector<double> preact;   // concatenated W_sh x_k
  std::vector<double> hidden;   // concatenated s_k
  ExitScores out;
};

ExitScores forward(const PolicyParams& params, std::span<const float> sample_scores);
void forward(const PolicyParams& params, std::span<const float> sample_scores, ForwardTrace& trace);

/// Upstream derivatives of the loss for one sample. d_r_tilde bypasses the softmax
/// Jacobian (used for the cross-entropy term whose logit gradient is r_hat - r).
struct ExitSeeds {
  std::span<const double> d_q_hat;
  std::span<const double> d_r_hat;
  std::span<const double> d_r_tilde;
};

/// Accumulates the gradient of one sample into `grad` (layout of params.weights()).
/// With detach_history the q_hat values fed to later exits are treated as constants.
void backward(const PolicyParams& params, const ForwardTrace& trace, const ExitSeeds& seeds, bool detach_history,
              std::span<double> grad);

/// Summed gradient over a batch of samples, seeds given per sample as [N][K] blocks.
std::vector<double> backward_batch(const PolicyParams& params, const ExitLog& log, std::span<const std::size_t> batch,
                                   std::span<const double> d_q_hat, std::span<const double> d_r_hat,
                                   bool detach_history = false);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes `<stem>.bin` (little-endian f32 weights behind a K/C/hidden-dims header)
/// and `<stem>.json` metadata.
void save_checkpoint(const PolicyParams& params, const std::filesystem::path& stem,
                     const std::string& config_digest = {});
PolicyParams load_checkpoint(const std::filesystem::path& stem);

}  // namespace exitsched
