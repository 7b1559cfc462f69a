// SPDX-License-Identifier: Apache-2.0
#pragma once

// Every knob of a distillation run, with a flat `key = value` text format.
//
// Lines are `key = value`; `#` starts a comment. Unknown keys are rejected.
// The same format is used for the config snapshot written into each run
// directory, so a snapshot replays its run exactly.

#include "gatekd/confidence.hpp"
#include "gatekd/gated_losses.hpp"
#include "gatekd/tasks.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace gatekd {

/// How decoder hidden states are presented to the alignment loss.
/// unit: each step standardized over its features, then scaled to unit length.
/// raw: the residual stream as is.
enum class HiddenNorm { unit, raw };

std::string_view to_string(HiddenNorm n);
HiddenNorm parse_hidden_norm(std::string_view s);

struct DistillConfig {
  Lambdas lambdas{};
  GateStrategy gating_strategy = GateStrategy::batch_relative;
  ConfidenceFormula confidence_formula = ConfidenceFormula::normalized_entropy;
  SoftForm soft_form = SoftForm::kl;
  AttentionForm attention_form = AttentionForm::mse;
  double gate_tau = 0.5;
  double sigmoid_slope = 10.0;
  bool gate_ties_open = false;
  // Ablation switches.
  bool force_confidence_one = false;
  bool hidden_gate_always_open = false;
  bool attention_gate_always_open = false;

  // Optimization.
  double learning_rate = 3e-4;
  double weight_decay = 1e-2;
  double warmup_fraction = 0.05;
  int batch_size = 128;
  int grad_accum_steps = 4;
  int max_epochs = 5;
  int patience = 2;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int precision = 32;

  // Data.
  TaskParams task{};
  std::size_t train_size = 2000;
  std::size_t val_size = 500;
  std::size_t test_size = 500;
  std::uint64_t data_seed = 1234;
  std::string data_dir;

  // Noisy teacher channel.
  NoisyTeacherSpec noise{};
  std::uint64_t teacher_seed = 99;

  // Architectures.
  int teacher_layers = 4;
  int teacher_dim = 128;
  int teacher_heads = 4;
  int student_layers = 2;
  int student_dim = 64;
  int student_heads = 2;
  int max_seq_len = 64;
  bool identity_projection = false;
  HiddenNorm hidden_norm = HiddenNorm::unit;
  bool subsample_teacher_heads = true;

  // Teacher pre-training (supervised, before distillation).
  std::string teacher_checkpoint;
  /// Teacher training pool size; the distillation train split is its prefix.
  /// 0 trains the teacher on the distillation split alone.
  std::size_t teacher_train_size = 0;
  int teacher_epochs = 30;
  double teacher_lr = 1e-3;
  int teacher_batch_size = 32;
  std::uint64_t teacher_init_seed = 7;

  /// Keys in canonical order with their formatted values.
  [[nodiscard]] std::vector<std::pair<std::string, std::string>> to_kv() const;
  /// Applies one assignment; throws InvalidInput on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  [[nodiscard]] std::string to_text() const;
  [[nodiscard]] std::size_t micro_batch_size() const;
};

/// The documented key list, in canonical order.
std::vector<std::string> config_keys();

DistillConfig parse_config_text(const std::string& text);
DistillConfig load_config(const std::filesystem::path& path);
void save_config(const DistillConfig& cfg, const std::filesystem::path& path);
/// Applies `key=value` overrides after the file config.
void apply_overrides(DistillConfig& cfg, const std::vector<std::string>& overrides);

/// Keys whose values differ between two configs.
std::vector<std::string> config_diff(const DistillConfig& a, const DistillConfig& b);

}  // namespace gatekd
