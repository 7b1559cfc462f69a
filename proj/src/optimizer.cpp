// SPDX-License-Identifier: Apache-2.0
#include "gatekd/optimizer.hpp"

#include <cmath>

namespace gatekd {

template <typename T>
AdamW<T>::AdamW(std::vector<Param<T>*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (auto* p : params_) {
    m_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1);
  const T b2 = static_cast<T>(cfg_.beta2);
  const T decay = static_cast<T>(1.0 - lr * cfg_.weight_decay);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param<T>& p = *params_[i];
    require(p.grad.rows() == p.value.rows() && p.grad.cols() == p.value.cols(),
            "AdamW: gradient not allocated for " + p.name);
    m_[i] = b1 * m_[i] + (T(1) - b1) * p.grad;
    v_[i] = b2 * v_[i] + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
    p.value *= decay;
    p.value.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

double LinearWarmupSchedule::at(std::size_t step) const {
  const double total = static_cast<double>(total_steps);
  const double warm = warmup_fraction * total;
  const double s = static_cast<double>(step);
  if (s < warm) return base_lr * s / warm;
  if (total <= warm) return 0.0;
  return base_lr * std::max(0.0, (total - s) / (total - warm));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace gatekd
