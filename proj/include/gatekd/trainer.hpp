// SPDX-License-Identifier: Apache-2.0
#pragma once

// The distillation loop: frozen teacher signals, per-example confidence,
// batch gates, the combined objective, and AdamW updates on the student and
// its hidden-state projections.

#include "gatekd/config.hpp"
#include "gatekd/model.hpp"
#include "gatekd/optimizer.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace gatekd {

struct EncodedExample {
  std::vector<Token> input;
  std::vector<Token> decoder_input;
  std::vector<Token> decoder_target;
};

EncodedExample encode_example(const ReasoningExample& ex, const CharVocab& vocab);

/// Frozen-teacher outputs for one training example.
template <typename T>
struct TeacherSignals {
  bool corrupted = false;
  std::string emitted_target;
  double confidence_normalized = 0.0;
  double confidence_exp = 0.0;
  Mat<T> soft;                                 // steps x V
  std::vector<Mat<T>> hidden;                  // per teacher decoder layer
  std::vector<std::vector<Mat<T>>> attention;  // [layer][head]

  [[nodiscard]] double confidence(ConfidenceFormula f) const {
    return f == ConfidenceFormula::normalized_entropy ? confidence_normalized : confidence_exp;
  }
};

template <typename T>
struct TeacherCache {
  std::vector<TeacherSignals<T>> signals;  // aligned with the train split
  std::uint64_t teacher_checksum = 0;
  int teacher_dim = 0;
};

/// Runs the noisy channel and the frozen teacher over every train example.
/// Each example's channel draw is seeded from (teacher_seed, seed_id), so the
/// cache does not depend on example order.
template <typename T>
TeacherCache<T> build_teacher_cache(const FrozenModel<T>& teacher, std::span<const ReasoningExample> train,
                                    const NoisyTeacherSpec& noise, std::uint64_t teacher_seed,
                                    const CharVocab& vocab);

/// Per-step standardization scaled to unit length (the `unit` hidden norm).
template <typename T>
Mat<T> unit_rows(const Mat<T>& h);

/// Student model plus one projection per aligned layer pair.
template <typename T>
struct Student {
  Seq2SeqModel<T> model;
  std::vector<Param<T>> projections;  // empty entries are identity maps

  Student(const ModelConfig& cfg, int teacher_dim, bool identity_projection, std::uint64_t seed);
  [[nodiscard]] std::vector<Param<T>*> trainable();
  void zero_grad();
  [[nodiscard]] std::uint64_t checksum() const;
};

template <typename T>
struct StepItem {
  std::size_t example_id = 0;
  const EncodedExample* example = nullptr;
  const TeacherSignals<T>* teacher = nullptr;  // null: task loss only
};

struct StepOutcome {
  LossBreakdown breakdown;
  std::vector<double> confidences;  // as used (after any forcing)
  std::vector<double> gates;        // strategy gate per item
  std::vector<double> soft_weights;
};

/// Zeroes gradients, then accumulates the gradient of the batch-mean
/// objective over micro-batches. Gates are computed across the whole batch.
/// Throws NonFiniteLoss naming the offending example ids.
template <typename T>
StepOutcome accumulate_gradients(std::span<const StepItem<T>> batch, Student<T>& student,
                                 const DistillConfig& cfg, const std::optional<LayerMap>& map);

/// accumulate_gradients followed by one optimizer update at learning rate lr.
template <typename T>
StepOutcome distill_step(std::span<const StepItem<T>> batch, Student<T>& student, AdamW<T>& opt, double lr,
                         const DistillConfig& cfg, const std::optional<LayerMap>& map);

double exact_match(std::span<const std::string> predictions, std::span<const std::string> targets);

template <typename T>
double evaluate_exact_match(const Seq2SeqModel<T>& model, std::span<const ReasoningExample> examples,
                            const CharVocab& vocab);

struct EpochGateStats {
  int epoch = 0;
  std::size_t clean_count = 0;
  double clean_open_rate = 0.0;
  double clean_mean_confidence = 0.0;
  std::size_t corrupted_count = 0;
  double corrupted_open_rate = 0.0;
  double corrupted_mean_confidence = 0.0;
};

struct RunRecord {
  std::uint64_t seed = 0;
  DistillConfig config;
  std::vector<LossBreakdown> steps;
  std::vector<int> step_epoch;
  std::vector<double> val_accuracy;  // one per completed epoch
  int best_epoch = 0;
  double test_accuracy = 0.0;
  bool early_stopped = false;
  std::vector<EpochGateStats> gate_stats;
  std::uint64_t teacher_checksum_before = 0;
  std::uint64_t teacher_checksum_after = 0;
  std::uint64_t student_checksum = 0;
  std::size_t student_parameters = 0;
};

/// Writes metrics.csv, gates.csv, run.json and config.cfg into `dir`.
void write_run_record(const RunRecord& rec, const std::filesystem::path& dir);

template <typename T>
struct TrainContext {
  const DatasetSplits* splits = nullptr;
  const FrozenModel<T>* teacher = nullptr;        // may be null when every lambda is 0
  const TeacherCache<T>* cache = nullptr;         // signals for splits->train
};

/// One training run for one seed: warm-up/decay schedule, per-epoch
/// validation exact match, early stopping (ties keep the earlier
/// checkpoint), then test accuracy of the best checkpoint.
template <typename T>
RunRecord train_run(const DistillConfig& cfg, const TrainContext<T>& ctx, std::uint64_t seed);

/// train_run for every configured seed.
template <typename T>
std::vector<RunRecord> train(const DistillConfig& cfg, const TrainContext<T>& ctx);

template <typename T>
struct TeacherTraining {
  std::optional<FrozenModel<T>> teacher;
  double validation_accuracy = 0.0;
  double test_accuracy = 0.0;
};

ModelConfig teacher_model_config(const DistillConfig& cfg, const CharVocab& vocab);
ModelConfig student_model_config(const DistillConfig& cfg, const CharVocab& vocab);

/// The distillation splits with the train split extended to
/// cfg.teacher_train_size by fresh examples disjoint from every split.
DatasetSplits teacher_training_splits(const DistillConfig& cfg, const DatasetSplits& splits);

/// Supervised training of the teacher on the gold train split, extended per
/// teacher_train_size.
template <typename T>
TeacherTraining<T> train_teacher(const DistillConfig& cfg, const DatasetSplits& splits);

/// Loads cfg.teacher_checkpoint when present, otherwise trains a teacher and
/// saves it there (if a path is configured).
template <typename T>
FrozenModel<T> obtain_teacher(const DistillConfig& cfg, const DatasetSplits& splits);

/// Splits from cfg.data_dir when set, otherwise generated from the task knobs.
DatasetSplits load_or_generate_splits(const DistillConfig& cfg);

}  // namespace gatekd
