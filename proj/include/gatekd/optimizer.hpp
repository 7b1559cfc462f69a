// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "gatekd/autodiff.hpp"

#include <cstddef>
#include <vector>

namespace gatekd {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// Adam with decoupled weight decay:
///   p <- p * (1 - lr * wd)
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Param<T>*> params, AdamWConfig cfg);

  /// Applies one update using each parameter's current grad.
  void step(double lr);
  [[nodiscard]] std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Param<T>*> params_;
  std::vector<Mat<T>> m_;
  std::vector<Mat<T>> v_;
  AdamWConfig cfg_;
  std::size_t t_ = 0;
};

/// Linear warm-up to the base rate over the first warmup_fraction of steps,
/// then linear decay to zero. Steps are 0-based.
struct LinearWarmupSchedule {
  double base_lr = 3e-4;
  std::size_t total_steps = 1;
  double warmup_fraction = 0.05;

  [[nodiscard]] double at(std::size_t step) const;
};

}  // namespace gatekd
