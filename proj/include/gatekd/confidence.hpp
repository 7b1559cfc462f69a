// SPDX-License-Identifier: Apache-2.0
#pragma once

// Teacher confidence from predictive entropy, and the gates derived from it.
//
// All entropies are in nats. Two confidence formulas are provided:
//   exp_neg_entropy     c = exp(-H(p))            in (0, 1]
//   normalized_entropy  c = 1 - H(p) / ln |V|     in [0, 1]
// Both equal 1 exactly on one-hot distributions.

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gatekd {

enum class ConfidenceFormula { exp_neg_entropy, normalized_entropy };
enum class GateStrategy { none, fixed_threshold, sigmoid, batch_relative };

/// Floor applied inside the logarithm so exact zeros never produce -inf.
inline constexpr double kLogFloor = 1e-12;
/// Tolerance on sum(p) == 1 for a valid probability vector.
inline constexpr double kNormTolerance = 1e-6;

/// Throws InvalidInput unless p is non-empty, non-negative and sums to 1.
void validate_distribution(std::span<const double> p);

double shannon_entropy(std::span<const double> p);
double confidence_exp(std::span<const double> p);
/// `vocab_size` must be >= 2 and equal to p.size().
double confidence_normalized(std::span<const double> p, int vocab_size);
double token_confidence(std::span<const double> p, ConfidenceFormula formula);

/// Mean of token_conf over steps where pad_mask is false. An empty pad_mask
/// means no padding.
double sequence_confidence(std::span<const double> token_conf, std::span<const bool> pad_mask = {});

struct ConfidenceProfile {
  std::vector<double> token_conf;
  double seq_conf = 0.0;
  ConfidenceFormula formula = ConfidenceFormula::normalized_entropy;
};

/// Confidence of a (steps x V) row-major distribution sequence.
ConfidenceProfile confidence_profile(std::span<const double> dists, int vocab_size,
                                     ConfidenceFormula formula,
                                     std::span<const bool> pad_mask = {});

struct GateParams {
  GateStrategy strategy = GateStrategy::batch_relative;
  double tau = 0.5;
  double slope = 10.0;
  /// When set, C == mean(C) opens the batch-relative gate.
  bool ties_open = false;
};

struct GateVector {
  std::vector<double> weights;
  GateStrategy strategy = GateStrategy::none;
  double threshold_tau = 0.5;
  double sigmoid_slope = 10.0;

  [[nodiscard]] double open_fraction() const;
};

GateVector make_gates(std::span<const double> confidences, const GateParams& params);

std::string_view to_string(ConfidenceFormula f);
std::string_view to_string(GateStrategy s);
ConfidenceFormula parse_confidence_formula(std::string_view s);
GateStrategy parse_gate_strategy(std::string_view s);

}  // namespace gatekd
