// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment matrices over config variants, tasks and seeds, plus report
// emission (CSV with a fixed schema and a plain-text "mean ± std" table).

#include "gatekd/trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gatekd {

/// A named set of config assignments applied on top of a shared base.
struct VariantSpec {
  std::string name;
  std::vector<std::pair<std::string, std::string>> delta;

  [[nodiscard]] DistillConfig apply(const DistillConfig& base) const;
};

VariantSpec full_variant();
VariantSpec vanilla_kd_variant();
/// full, w/o confidence gating, w/o hidden-state gate, w/o attention gate.
std::vector<VariantSpec> ablation_variants();
/// Loss removal instead of gate removal (lambda2 = 0, lambda3 = 0).
std::vector<VariantSpec> loss_removal_variants();
/// No gating, fixed threshold, sigmoid weighting, batch-relative.
std::vector<VariantSpec> gating_variants(double tau = 0.5);

/// Splits, frozen teacher and cached teacher signals for one task.
template <typename T>
struct TaskBench {
  TaskKind task = TaskKind::last_letter;
  DatasetSplits splits;
  std::optional<FrozenModel<T>> teacher;
  std::optional<TeacherCache<T>> cache;
  double teacher_test_accuracy = -1.0;  // negative when loaded from a checkpoint

  [[nodiscard]] TrainContext<T> context() const { return {&splits, &*teacher, &*cache}; }
};

/// Builds (or loads) the teacher for `task` and precomputes its signals.
/// A configured teacher_checkpoint is treated as a directory holding one
/// checkpoint per task.
template <typename T>
TaskBench<T> make_task_bench(const DistillConfig& base, TaskKind task);

struct CellResult {
  std::string variant;
  TaskKind task = TaskKind::last_letter;
  std::vector<std::uint64_t> seeds;   // seeds that completed
  std::vector<double> accuracies;     // test exact match in [0,1], aligned with seeds
  std::vector<RunRecord> runs;
  std::string error;                  // set when the cell failed part way

  [[nodiscard]] double mean() const;
  /// Sample standard deviation over completed seeds; 0 for a single seed.
  [[nodiscard]] double stddev() const;
};

struct ExperimentMatrix {
  std::vector<VariantSpec> variants;
  std::vector<TaskKind> tasks;
  std::vector<std::uint64_t> seeds;
  std::vector<CellResult> cells;  // variant-major

  [[nodiscard]] const CellResult& cell(const std::string& variant, TaskKind task) const;
  [[nodiscard]] bool complete() const;
};

/// Runs every variant on every bench for every seed in base.seeds. A failing
/// cell records its error and the remaining cells still run. When out_dir is
/// set, each cell gets `<variant>/<task>/config.cfg` before training and one
/// run directory per seed.
template <typename T>
ExperimentMatrix run_matrix(const DistillConfig& base, const std::vector<VariantSpec>& variants,
                            std::span<const TaskBench<T>> benches, const std::filesystem::path& out_dir = {});

template <typename T>
ExperimentMatrix run_ablation(const DistillConfig& base, std::span<const TaskBench<T>> benches,
                              const std::filesystem::path& out_dir = {}, bool include_loss_removal = false);

template <typename T>
ExperimentMatrix run_gating_comparison(const DistillConfig& base, std::span<const TaskBench<T>> benches,
                                       const std::filesystem::path& out_dir = {});

/// One row of the report; mean and std are in accuracy points (0-100).
struct ReportRow {
  std::string variant;
  std::string task;
  std::size_t seed_count = 0;
  double mean = 0.0;
  double std = 0.0;

  bool operator==(const ReportRow&) const = default;
};

std::vector<ReportRow> report_rows(const ExperimentMatrix& m);
/// Table with one row per variant and one "mean ± std" column per task.
/// Partial and failed cells are marked in place.
std::string format_report_table(const ExperimentMatrix& m);
/// Writes report.csv and report.txt into dir. Throws on an empty matrix
/// before touching the file system.
void emit_report(const ExperimentMatrix& m, const std::filesystem::path& dir);
std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

/// Directory-safe form of a variant name.
std::string slugify(std::string_view name);

struct GateSummary {
  std::vector<EpochGateStats> epochs;
  std::size_t steps = 0;
  [[nodiscard]] bool corrupted_empty() const;
};

/// Reads gates.csv and metrics.csv from a run directory.
GateSummary read_gate_summary(const std::filesystem::path& run_dir);
std::string format_gate_summary(const GateSummary& s);

}  // namespace gatekd
