// SPDX-License-Identifier: Apache-2.0
#include "gatekd/confidence.hpp"

#include "gatekd/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gatekd {

void validate_distribution(std::span<const double> p) {
  require(!p.empty(), "probability vector is empty");
  double sum = 0.0;
  for (double v : p) {
    require(std::isfinite(v) && v >= 0.0, "probability entry is negative or non-finite");
    sum += v;
  }
  require(std::abs(sum - 1.0) <= kNormTolerance, "probability vector does not sum to 1");
}

double shannon_entropy(std::span<const double> p) {
  validate_distribution(p);
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(std::max(v, kLogFloor));
  }
  // Rounding can push a one-hot entropy a hair below zero.
  return std::clamp(h, 0.0, std::log(static_cast<double>(p.size())));
}

double confidence_exp(std::span<const double> p) { return std::exp(-shannon_entropy(p)); }

double confidence_normalized(std::span<const double> p, int vocab_size) {
  require(vocab_size >= 2, "normalized confidence needs a vocabulary of at least 2");
  require(static_cast<std::size_t>(vocab_size) == p.size(), "vocabulary size does not match distribution");
  const double h = shannon_entropy(p);
  return std::clamp(1.0 - h / std::log(static_cast<double>(vocab_size)), 0.0, 1.0);
}

double token_confidence(std::span<const double> p, ConfidenceFormula formula) {
  switch (formula) {
    case ConfidenceFormula::exp_neg_entropy:
      return confidence_exp(p);
    case ConfidenceFormula::normalized_entropy:
      return confidence_normalized(p, static_cast<int>(p.size()));
  }
  return 0.0;
}

double sequence_confidence(std::span<const double> token_conf, std::span<const bool> pad_mask) {
  require(pad_mask.empty() || pad_mask.size() == token_conf.size(), "pad mask length mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < token_conf.size(); ++t) {
    if (!pad_mask.empty() && pad_mask[t]) continue;
    sum += token_conf[t];
    ++count;
  }
  require(count > 0, "sequence has no non-padding steps");
  return sum / static_cast<double>(count);
}

ConfidenceProfile confidence_profile(std::span<const double> dists, int vocab_size,
                                     ConfidenceFormula formula, std::span<const bool> pad_mask) {
  require(vocab_size >= 1 && dists.size() % static_cast<std::size_t>(vocab_size) == 0,
          "distribution sequence is not a whole number of rows");
  const std::size_t steps = dists.size() / static_cast<std::size_t>(vocab_size);
  ConfidenceProfile prof;
  prof.formula = formula;
  prof.token_conf.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    prof.token_conf.push_back(token_confidence(dists.subspan(t * vocab_size, vocab_size), formula));
  }
  prof.seq_conf = sequence_confidence(prof.token_conf, pad_mask);
  return prof;
}

double GateVector::open_fraction() const {
  if (weights.empty()) return 0.0;
  return std::accumulate(weights.begin(), weights.end(), 0.0) / static_cast<double>(weights.size());
}

GateVector make_gates(std::span<const double> confidences, const GateParams& params) {
  require(!confidences.empty(), "make_gates: empty confidence vector");
  for (double c : confidences) require(c >= 0.0 && c <= 1.0, "make_gates: confidence outside [0,1]");

  GateVector g;
  g.strategy = params.strategy;
  g.threshold_tau = params.tau;
  g.sigmoid_slope = params.slope;
  g.weights.resize(confidences.size());

  switch (params.strategy) {
    case GateStrategy::none:
      std::fill(g.weights.begin(), g.weights.end(), 1.0);
      break;
    case GateStrategy::fixed_threshold:
      std::transform(confidences.begin(), confidences.end(), g.weights.begin(),
                     [&](double c) { return c > params.tau ? 1.0 : 0.0; });
      break;
    case GateStrategy::sigmoid:
      std::transform(confidences.begin(), confidences.end(), g.weights.begin(), [&](double c) {
        return 1.0 / (1.0 + std::exp(-params.slope * (c - params.tau)));
      });
      break;
    case GateStrategy::batch_relative: {
      const double mean = std::accumulate(confidences.begin(), confidences.end(), 0.0) /
                          static_cast<double>(confidences.size());
      std::transform(confidences.begin(), confidences.end(), g.weights.begin(), [&](double c) {
        return (c > mean || (params.ties_open && c == mean)) ? 1.0 : 0.0;
      });
      break;
    }
  }
  return g;
}

std::string_view to_string(ConfidenceFormula f) {
  return f == ConfidenceFormula::exp_neg_entropy ? "exp_neg_entropy" : "normalized_entropy";
}

std::string_view to_string(GateStrategy s) {
  switch (s) {
    case GateStrategy::none: return "none";
    case GateStrategy::fixed_threshold: return "fixed_threshold";
    case GateStrategy::sigmoid: return "sigmoid";
    case GateStrategy::batch_relative: return "batch_relative";
  }
  return "none";
}

ConfidenceFormula parse_confidence_formula(std::string_view s) {
  if (s == "exp_neg_entropy") return ConfidenceFormula::exp_neg_entropy;
  if (s == "normalized_entropy") return ConfidenceFormula::normalized_entropy;
  throw InvalidInput("unknown confidence formula: " + std::string(s));
}

GateStrategy parse_gate_strategy(std::string_view s) {
  if (s == "none") return GateStrategy::none;
  if (s == "fixed_threshold") return GateStrategy::fixed_threshold;
  if (s == "sigmoid") return GateStrategy::sigmoid;
  if (s == "batch_relative") return GateStrategy::batch_relative;
  throw InvalidInput("unknown gating strategy: " + std::string(s));
}

}  // namespace gatekd
