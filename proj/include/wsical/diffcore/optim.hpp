#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <spdlog/spdlog.h>

#include "wsical/diffcore/params.hpp"

namespace wsical::ad {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are aligned with the ParamSet's
/// entry order, so the same set (or one with identical layout) must be passed
/// to every step.
template <typename T>
class Adam {
 public:
  Adam(const ParamSet<T>& params, AdamConfig config) : config_(config) {
    if (!(config.learning_rate > 0) || !(config.eps > 0)) {
      throw std::invalid_argument("adam: learning rate and eps must be positive");
    }
    for (const auto& e : params) {
      first_.emplace_back(e.value.shape);
      second_.emplace_back(e.value.shape);
    }
  }

  /// Applies one update and zeroes the gradients. Returns false (and leaves
  /// parameters and moments untouched) when any gradient is non-finite.
  bool step(ParamSet<T>& params) {
    if (params.size() != first_.size()) throw std::invalid_argument("adam: parameter layout changed");
    for (const auto& e : params) {
      if (!e.grad.all_finite()) {
        spdlog::warn("adam: non-finite gradient in '{}', step skipped", e.name);
        params.zero_grad();
        ++skipped_;
        return false;
      }
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, double(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, double(steps_));
    const T b1 = T(config_.beta1), b2 = T(config_.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& e = params.entry(i);
      auto& m = first_[i].data;
      auto& v = second_[i].data;
      for (std::size_t j = 0; j < e.value.size(); ++j) {
        const T g = e.grad.data[j];
        m[j] = b1 * m[j] + (T{1} - b1) * g;
        v[j] = b2 * v[j] + (T{1} - b2) * g * g;
        const double m_hat = double(m[j]) / c1;
        const double v_hat = double(v[j]) / c2;
        e.value.data[j] -= T(config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.eps));
      }
    }
    params.zero_grad();
    return true;
  }

  std::size_t steps() const { return steps_; }
  std::size_t skipped() const { return skipped_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<Tensor<T>> first_;
  std::vector<Tensor<T>> second_;
  std::size_t steps_ = 0;
  std::size_t skipped_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParamSet<T>& params, double max_norm) {
  double sq = 0;
  for (const auto& e : params) {
    for (T g : e.grad.data) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm) {
    const T factor = T(max_norm / norm);
    for (auto& e : params) {
      for (T& g : e.grad.data) g *= factor;
    }
  }
  return norm;
}

}  // namespace wsical::ad
