// SPDX-License-Identifier: Apache-2.0
#pragma once

// The three gated distillation losses and the combined objective.
//
// Every loss is a pure function returning its value together with the
// analytic gradient with respect to each student-side input (and the
// projection weights for the hidden-state path). Reductions: mean over
// non-padding steps, sum over aligned layers and heads. The trainer averages
// over the batch.

#include "gatekd/common.hpp"
#include "gatekd/confidence.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace gatekd {

enum class SoftForm { cross_entropy, kl };
enum class AttentionForm { mse, kl };

std::string_view to_string(SoftForm f);
std::string_view to_string(AttentionForm f);
SoftForm parse_soft_form(std::string_view s);
AttentionForm parse_attention_form(std::string_view s);

/// Student layer k (0-based) is aligned with teacher layer teacher_of[k].
struct LayerMap {
  int student_layers = 0;
  int teacher_layers = 0;
  std::vector<int> teacher_of;
};

/// alpha(k) = floor(k * L_T / L_S) on 1-based layers, stored 0-based.
LayerMap uniform_layer_map(int student_layers, int teacher_layers);

/// Student head h (0-based) compares against teacher head floor(h * H_T / H_S).
std::vector<int> uniform_head_map(int student_heads, int teacher_heads);

template <typename T>
struct SoftLossResult {
  T value = 0;
  Mat<T> grad_logits;
};

/// confidence * mean_t D(p_T,t || softmax(z_S,t)), D being KL or cross-entropy.
template <typename T>
SoftLossResult<T> gated_soft_loss(const Mat<T>& teacher_probs, const Mat<T>& student_logits,
                                  T confidence, SoftForm form, std::span<const bool> pad_mask = {});

template <typename T>
struct HiddenLossResult {
  T value = 0;
  std::vector<Mat<T>> grad_student;     // per student layer
  std::vector<Mat<T>> grad_projection;  // per student layer; empty for identity
};

/// sum_k gate_k * mean_t || h_S^k - h_T^{alpha(k)} W_k ||^2.
/// An empty projection matrix means identity (dimensions must already agree).
template <typename T>
HiddenLossResult<T> gated_hidden_loss(const std::vector<Mat<T>>& student_hiddens,
                                      const std::vector<Mat<T>>& teacher_hiddens,
                                      const std::vector<Mat<T>>& projections,
                                      std::span<const T> gates, const LayerMap& map,
                                      std::span<const bool> pad_mask = {});

template <typename T>
struct AttentionLossResult {
  T value = 0;
  std::vector<std::vector<Mat<T>>> grad_student;  // [layer][head]
};

struct AttentionLossOptions {
  AttentionForm form = AttentionForm::mse;
  /// When false a student/teacher head-count mismatch is an error.
  bool subsample_teacher_heads = true;
  double row_tolerance = 1e-5;
};

/// Gated sum over aligned layers and heads of mean-over-steps
/// ||A_S - A_T||^2 (mse) or row KL(A_T || A_S) (kl).
template <typename T>
AttentionLossResult<T> gated_attention_loss(const std::vector<std::vector<Mat<T>>>& student_attn,
                                            const std::vector<std::vector<Mat<T>>>& teacher_attn,
                                            std::span<const T> gates, const LayerMap& map,
                                            const AttentionLossOptions& opts,
                                            std::span<const bool> pad_mask = {});

struct LossBreakdown {
  double task_loss = 0;
  double soft_loss = 0;
  double hidden_loss = 0;
  double attention_loss = 0;
  double total = 0;
  double gate_open_fraction = 0;
  double mean_confidence = 0;
};

struct Lambdas {
  double soft = 1.0;
  double hidden = 0.5;
  double attention = 0.1;
};

/// Throws NonFiniteLoss on NaN/Inf components; InvalidInput on negatives.
LossBreakdown combined_loss(double task_loss, double soft_loss, double hidden_loss,
                            double attention_loss, const Lambdas& lambdas,
                            double gate_open_fraction = 0.0, double mean_confidence = 0.0);

}  // namespace gatekd
