#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace exitsched {

/// Adam with bias correction. L2 regularization is not folded in here; the caller
/// adds weight * theta to the gradient before step().
class Adam {
 public:
  struct Options {
    double learning_rate = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(std::size_t n_params, Options opts) : opts_(opts), m_(n_params, 0.0), v_(n_params, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * grad[i];
      v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * grad[i] * grad[i];
      const double m_hat = m_[i] / bc1;
      const double v_hat = v_[i] / bc2;
      params[i] -= opts_.learning_rate * m_hat / (std::sqrt(v_hat) + opts_.epsilon);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  Options opts_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

}  // namespace exitsched
