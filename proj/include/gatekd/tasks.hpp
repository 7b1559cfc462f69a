// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic reasoning tasks and a controllable noisy-teacher channel.
//
// Last Letter: "Max Mikey Cynthia Holly" -> "xyay".
// Shuffled Objects: "A:hat B:key C:cup;A-B;C?" -> "cup". Agents start with
// distinct three-letter items, swap pairwise, and the query asks what one
// agent holds at the end.

#include "gatekd/common.hpp"
#include "gatekd/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace gatekd {

enum class TaskKind { last_letter, shuffled_objects };

std::string_view to_string(TaskKind t);
TaskKind parse_task(std::string_view s);

struct ReasoningExample {
  std::string input_text;
  std::string target_text;
  TaskKind task = TaskKind::last_letter;
  bool corrupted = false;
  std::int64_t seed_id = 0;

  bool operator==(const ReasoningExample&) const = default;
};

/// The bundled list of 200 proper names used by Last Letter.
std::span<const std::string_view> name_list();
/// Three-letter items handed out in Shuffled Objects.
std::span<const std::string_view> item_list();

ReasoningExample make_last_letter(std::span<const std::string> words, std::int64_t seed_id = 0);
ReasoningExample gen_last_letter(int num_words, std::uint64_t seed);

struct ShuffledObjectsInstance {
  std::vector<std::string> initial_items;      // initial_items[a] held by agent a
  std::vector<std::pair<int, int>> swaps;      // 0-based agent pairs
  int query_agent = 0;
};

ReasoningExample make_shuffled_objects(const ShuffledObjectsInstance& inst, std::int64_t seed_id = 0);
ShuffledObjectsInstance sample_shuffled_objects(int num_agents, int num_swaps, std::uint64_t seed);
ReasoningExample gen_shuffled_objects(int num_agents, int num_swaps, std::uint64_t seed);

// ------------------------------------------------------------------ datasets

struct TaskParams {
  TaskKind task = TaskKind::last_letter;
  int num_words = 3;
  int num_agents = 3;
  int num_swaps = 3;
};

ReasoningExample generate_example(const TaskParams& params, std::uint64_t seed);

struct DatasetSplits {
  std::vector<ReasoningExample> train;
  std::vector<ReasoningExample> validation;
  std::vector<ReasoningExample> test;
};

/// Splits are disjoint by input text; examples within a split are unique.
DatasetSplits generate_splits(const TaskParams& params, std::size_t n_train, std::size_t n_val,
                              std::size_t n_test, std::uint64_t seed);

/// Throws InvalidInput if any split is empty or two splits share an input.
void validate_splits(const DatasetSplits& splits);

std::string to_jsonl_line(const ReasoningExample& ex);
ReasoningExample from_jsonl_line(std::string_view line);
void write_jsonl(const std::filesystem::path& path, std::span<const ReasoningExample> examples);
std::vector<ReasoningExample> read_jsonl(const std::filesystem::path& path);

/// train.jsonl / validation.jsonl / test.jsonl under `dir`.
void write_splits(const std::filesystem::path& dir, const DatasetSplits& splits);
DatasetSplits read_splits(const std::filesystem::path& dir);

// ------------------------------------------------------------- noisy teacher

struct NoisyTeacherSpec {
  double error_rate = 0.3;   // probability an emission is corrupted
  double calibration = 1.0;  // 1: corrupted emissions near-uniform; 0: confidently wrong
  double peak_prob = 0.9;    // mass on the emitted token of a confident step

  void validate(int vocab_size) const;
};

struct TeacherEmission {
  bool corrupted = false;
  /// What the teacher believed it read; differs from the input when corrupted.
  std::string emitted_input;
  std::string emitted_target;
  /// (len(emitted_target) + 1) x V next-token distributions, row-major.
  std::vector<double> distributions;
  int vocab_size = 0;

  [[nodiscard]] std::size_t steps() const { return distributions.size() / static_cast<std::size_t>(vocab_size); }
};

/// Corrupted emissions keep the target length, so teacher and student
/// sequences stay aligned step for step.
TeacherEmission noisy_teacher_emit(const ReasoningExample& example, const NoisyTeacherSpec& spec,
                                   const CharVocab& vocab, std::mt19937_64& rng);

}  // namespace gatekd
