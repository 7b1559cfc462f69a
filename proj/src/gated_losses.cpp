// SPDX-License-Identifier: Apache-2.0
#include "gatekd/gated_losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gatekd {

namespace {

template <typename T>
constexpr T row_sum_tolerance() {
  return std::is_same_v<T, double> ? T(1e-6) : T(1e-4);
}

template <typename T>
constexpr T log_floor() {
  return std::is_same_v<T, double> ? T(1e-12) : T(1e-30);
}

std::size_t count_steps(Eigen::Index rows, std::span<const bool> pad_mask) {
  require(pad_mask.empty() || pad_mask.size() == static_cast<std::size_t>(rows), "pad mask length mismatch");
  std::size_t n = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    if (pad_mask.empty() || !pad_mask[static_cast<std::size_t>(r)]) ++n;
  require(n > 0, "sequence has no non-padding steps");
  return n;
}

inline bool is_pad(std::span<const bool> pad_mask, Eigen::Index r) {
  return !pad_mask.empty() && pad_mask[static_cast<std::size_t>(r)];
}

template <typename T>
void check_row_stochastic(const Mat<T>& a, std::span<const bool> pad_mask, double tol, const char* who) {
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    if (is_pad(pad_mask, r)) continue;
    require((a.row(r).array() >= T(0)).all(), std::string(who) + ": negative attention weight");
    require(std::abs(static_cast<double>(a.row(r).sum()) - 1.0) <= tol,
            std::string(who) + ": attention row does not sum to 1");
  }
}

}  // namespace

std::string_view to_string(SoftForm f) { return f == SoftForm::kl ? "kl" : "cross_entropy"; }
std::string_view to_string(AttentionForm f) { return f == AttentionForm::kl ? "kl" : "mse"; }

SoftForm parse_soft_form(std::string_view s) {
  if (s == "kl") return SoftForm::kl;
  if (s == "cross_entropy" || s == "ce") return SoftForm::cross_entropy;
  throw InvalidInput("unknown soft loss form: " + std::string(s));
}

AttentionForm parse_attention_form(std::string_view s) {
  if (s == "mse") return AttentionForm::mse;
  if (s == "kl") return AttentionForm::kl;
  throw InvalidInput("unknown attention loss form: " + std::string(s));
}

LayerMap uniform_layer_map(int student_layers, int teacher_layers) {
  require(student_layers >= 1 && teacher_layers >= 1, "layer counts must be positive");
  require(student_layers <= teacher_layers, "student deeper than teacher is unsupported");
  LayerMap m;
  m.student_layers = student_layers;
  m.teacher_layers = teacher_layers;
  m.teacher_of.reserve(static_cast<std::size_t>(student_layers));
  for (int k = 1; k <= student_layers; ++k) m.teacher_of.push_back(k * teacher_layers / student_layers - 1);
  return m;
}

std::vector<int> uniform_head_map(int student_heads, int teacher_heads) {
  require(student_heads >= 1 && teacher_heads >= student_heads,
          "teacher must have at least as many heads as the student");
  std::vector<int> out;
  for (int h = 0; h < student_heads; ++h) out.push_back(h * teacher_heads / student_heads);
  return out;
}

template <typename T>
SoftLossResult<T> gated_soft_loss(const Mat<T>& teacher_probs, const Mat<T>& student_logits,
                                  T confidence, SoftForm form, std::span<const bool> pad_mask) {
  require(teacher_probs.rows() == student_logits.rows() && teacher_probs.cols() == student_logits.cols(),
          "soft loss: teacher/student shape mismatch");
  require(confidence >= T(0) && confidence <= T(1), "soft loss: confidence outside [0,1]");
  const auto n = count_steps(student_logits.rows(), pad_mask);

  SoftLossResult<T> out;
  out.grad_logits = Mat<T>::Zero(student_logits.rows(), student_logits.cols());
  if (confidence == T(0)) return out;

  const T w = confidence / static_cast<T>(n);
  T total = 0;
  for (Eigen::Index r = 0; r < student_logits.rows(); ++r) {
    if (is_pad(pad_mask, r)) continue;
    auto p = teacher_probs.row(r);
    require((p.array() >= T(0)).all() && std::abs(p.sum() - T(1)) <= row_sum_tolerance<T>(),
            "soft loss: teacher row is not a distribution");
    auto z = student_logits.row(r);
    const T m = z.maxCoeff();
    const T lse = m + std::log((z.array() - m).exp().sum());
    T row = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const T pi = p(i);
      if (pi <= T(0)) continue;
      row -= pi * (z(i) - lse);
      if (form == SoftForm::kl) row += pi * std::log(std::max(pi, log_floor<T>()));
    }
    total += row;
    const T psum = p.sum();
    out.grad_logits.row(r) = w * ((z.array() - lse).exp() * psum - p.array()).matrix();
  }
  out.value = w * total;
  return out;
}

template <typename T>
HiddenLossResult<T> gated_hidden_loss(const std::vector<Mat<T>>& student_hiddens,
                                      const std::vector<Mat<T>>& teacher_hiddens,
                                      const std::vector<Mat<T>>& projections, std::span<const T> gates,
                                      const LayerMap& map, std::span<const bool> pad_mask) {
  const auto ls = static_cast<std::size_t>(map.student_layers);
  require(student_hiddens.size() == ls, "hidden loss: student layer count does not match map");
  require(teacher_hiddens.size() == static_cast<std::size_t>(map.teacher_layers),
          "hidden loss: teacher layer count does not match map");
  require(projections.size() == ls, "hidden loss: one projection per aligned pair required");
  require(gates.size() == ls, "hidden loss: one gate per student layer required");

  HiddenLossResult<T> out;
  out.grad_student.resize(ls);
  out.grad_projection.resize(ls);
  for (std::size_t k = 0; k < ls; ++k) {
    const Mat<T>& hs = student_hiddens[k];
    const Mat<T>& ht = teacher_hiddens[static_cast<std::size_t>(map.teacher_of[k])];
    const Mat<T>& w = projections[k];
    require(hs.rows() == ht.rows(), "hidden loss: step count mismatch");
    if (w.size() == 0) {
      require(ht.cols() == hs.cols(), "hidden loss: dimension mismatch with identity projection");
    } else {
      require(w.rows() == ht.cols() && w.cols() == hs.cols(), "hidden loss: dimension mismatch after projection");
    }
    out.grad_student[k] = Mat<T>::Zero(hs.rows(), hs.cols());
    if (w.size() != 0) out.grad_projection[k] = Mat<T>::Zero(w.rows(), w.cols());

    const T g = gates[k];
    require(g >= T(0) && g <= T(1), "hidden loss: gate outside [0,1]");
    if (g == T(0)) continue;

    const auto n = count_steps(hs.rows(), pad_mask);
    Mat<T> resid = (w.size() == 0) ? Mat<T>(hs - ht) : Mat<T>(hs - ht * w);
    for (Eigen::Index r = 0; r < resid.rows(); ++r)
      if (is_pad(pad_mask, r)) resid.row(r).setZero();
    const T scale = g / static_cast<T>(n);
    out.value += scale * resid.squaredNorm();
    out.grad_student[k] = (T(2) * scale) * resid;
    if (w.size() != 0) out.grad_projection[k].noalias() = (T(-2) * scale) * (ht.transpose() * resid);
  }
  return out;
}

template <typename T>
AttentionLossResult<T> gated_attention_loss(const std::vector<std::vector<Mat<T>>>& student_attn,
                                            const std::vector<std::vector<Mat<T>>>& teacher_attn,
                                            std::span<const T> gates, const LayerMap& map,
                                            const AttentionLossOptions& opts, std::span<const bool> pad_mask) {
  const auto ls = static_cast<std::size_t>(map.student_layers);
  require(student_attn.size() == ls, "attention loss: student layer count does not match map");
  require(teacher_attn.size() == static_cast<std::size_t>(map.teacher_layers),
          "attention loss: teacher layer count does not match map");
  require(gates.size() == ls, "attention loss: one gate per student layer required");

  AttentionLossResult<T> out;
  out.grad_student.resize(ls);
  for (std::size_t k = 0; k < ls; ++k) {
    const auto& s_heads = student_attn[k];
    const auto& t_heads = teacher_attn[static_cast<std::size_t>(map.teacher_of[k])];
    const int hs = static_cast<int>(s_heads.size());
    const int ht = static_cast<int>(t_heads.size());
    require(hs >= 1, "attention loss: no student heads");
    if (hs != ht) require(opts.subsample_teacher_heads, "attention loss: head-count mismatch");
    const std::vector<int> head_of = uniform_head_map(hs, ht);

    const T g = gates[k];
    require(g >= T(0) && g <= T(1), "attention loss: gate outside [0,1]");
    out.grad_student[k].resize(static_cast<std::size_t>(hs));
    for (int h = 0; h < hs; ++h) {
      const Mat<T>& as = s_heads[static_cast<std::size_t>(h)];
      const Mat<T>& at = t_heads[static_cast<std::size_t>(head_of[static_cast<std::size_t>(h)])];
      require(as.rows() == at.rows() && as.cols() == at.cols(), "attention loss: map shape mismatch");
      check_row_stochastic(as, pad_mask, opts.row_tolerance, "attention loss (student)");
      check_row_stochastic(at, pad_mask, opts.row_tolerance, "attention loss (teacher)");
      Mat<T>& grad = out.grad_student[k][static_cast<std::size_t>(h)];
      grad = Mat<T>::Zero(as.rows(), as.cols());
      if (g == T(0)) continue;

      const auto n = count_steps(as.rows(), pad_mask);
      const T scale = g / static_cast<T>(n);
      for (Eigen::Index r = 0; r < as.rows(); ++r) {
        if (is_pad(pad_mask, r)) continue;
        if (opts.form == AttentionForm::mse) {
          auto d = (as.row(r) - at.row(r)).eval();
          out.value += scale * d.squaredNorm();
          grad.row(r) = (T(2) * scale) * d;
        } else {
          for (Eigen::Index j = 0; j < as.cols(); ++j) {
            const T a_t = at(r, j);
            if (a_t <= T(0)) continue;
            const T a_s = std::max(as(r, j), log_floor<T>());
            out.value += scale * a_t * (std::log(std::max(a_t, log_floor<T>())) - std::log(a_s));
            grad(r, j) = -scale * a_t / a_s;
          }
        }
      }
    }
  }
  return out;
}

LossBreakdown combined_loss(double task_loss, double soft_loss, double hidden_loss, double attention_loss,
                            const Lambdas& lambdas, double gate_open_fraction, double mean_confidence) {
  for (double v : {task_loss, soft_loss, hidden_loss, attention_loss}) {
    if (!std::isfinite(v)) throw NonFiniteLoss("non-finite loss component");
    // Tiny negative values from rounding in KL terms are tolerated.
    require(v >= -1e-9, "loss components must be non-negative");
  }
  LossBreakdown b;
  b.task_loss = task_loss;
  b.soft_loss = std::max(0.0, soft_loss);
  b.hidden_loss = std::max(0.0, hidden_loss);
  b.attention_loss = std::max(0.0, attention_loss);
  b.total = b.task_loss + lambdas.soft * b.soft_loss + lambdas.hidden * b.hidden_loss +
            lambdas.attention * b.attention_loss;
  if (!std::isfinite(b.total)) throw NonFiniteLoss("non-finite total loss");
  b.gate_open_fraction = gate_open_fraction;
  b.mean_confidence = mean_confidence;
  return b;
}

#define GATEKD_INSTANTIATE(T)                                                                         \
  template SoftLossResult<T> gated_soft_loss<T>(const Mat<T>&, const Mat<T>&, T, SoftForm,            \
                                                std::span<const bool>);                               \
  template HiddenLossResult<T> gated_hidden_loss<T>(const std::vector<Mat<T>>&,                       \
                                                    const std::vector<Mat<T>>&,                       \
                                                    const std::vector<Mat<T>>&, std::span<const T>,   \
                                                    const LayerMap&, std::span<const bool>);          \
  template AttentionLossResult<T> gated_attention_loss<T>(                                            \
      const std::vector<std::vector<Mat<T>>>&, const std::vector<std::vector<Mat<T>>>&,               \
      std::span<const T>, const LayerMap&, const AttentionLossOptions&, std::span<const bool>);

GATEKD_INSTANTIATE(float)
GATEKD_INSTANTIATE(double)

#undef GATEKD_INSTANTIATE

}  // namespace gatekd
