#include "doctest.h"
#include "oracles.hpp"

#include "gatekd/confidence.hpp"
#include "gatekd/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace gatekd;

TEST_CASE("last letter examples") {
  const std::vector<std::string> words{"Max", "Mikey", "Cynthia", "Holly"};
  const auto ex = make_last_letter(words);
  CHECK(ex.input_text == "Max Mikey Cynthia Holly");
  CHECK(ex.target_text == "xyay");
  CHECK(make_last_letter(std::vector<std::string>{"A"}).target_text == "a");
  CHECK(gen_last_letter(3, 7) == gen_last_letter(3, 7));
  CHECK_THROWS_AS(make_last_letter(std::vector<std::string>{}), InvalidInput);
  CHECK_THROWS_AS(gen_last_letter(0, 1), InvalidInput);
}

TEST_CASE("name list has 200 distinct names") {
  const auto names = name_list();
  CHECK(names.size() == 200);
  std::set<std::string_view> uniq(names.begin(), names.end());
  CHECK(uniq.size() == 200);
  CHECK(uniq.count("Max") == 1);
  CHECK(uniq.count("Holly") == 1);
}

TEST_CASE("shuffled objects examples") {
  ShuffledObjectsInstance inst{{"hat", "key", "cup"}, {}, 2};
  CHECK(make_shuffled_objects(inst).target_text == "cup");
  inst.swaps = {{0, 1}, {0, 1}};
  inst.query_agent = 0;
  CHECK(make_shuffled_objects(inst).target_text == "hat");
  inst.swaps = {{0, 1}, {1, 2}};
  // After A-B: A key, B hat. After B-C: B cup, C hat.
  CHECK(make_shuffled_objects(inst).target_text == "key");
  inst.query_agent = 2;
  CHECK(make_shuffled_objects(inst).target_text == "hat");
  const auto ex = gen_shuffled_objects(4, 5, 11);
  CHECK(ex.target_text == oracle::shuffled_objects_answer(ex.input_text));
  inst.swaps = {{0, 0}};
  CHECK_THROWS_AS(make_shuffled_objects(inst), InvalidInput);
}

TEST_CASE("property: generators agree with brute-force oracles on 10,000 instances each") {
  int mismatches = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto ll = gen_last_letter(1 + static_cast<int>(s % 6), s);
    mismatches += ll.target_text != oracle::last_letters(ll.input_text);
    const auto so = gen_shuffled_objects(2 + static_cast<int>(s % 6), static_cast<int>(s % 9), s);
    mismatches += so.target_text != oracle::shuffled_objects_answer(so.input_text);
  }
  CHECK(mismatches == 0);
}

TEST_CASE("property: generators are pure functions of (parameters, seed)") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    CHECK(generate_example(TaskParams{TaskKind::last_letter, 4}, s) == generate_example(TaskParams{TaskKind::last_letter, 4}, s));
    CHECK(generate_example(TaskParams{TaskKind::shuffled_objects}, s) == generate_example(TaskParams{TaskKind::shuffled_objects}, s));
  }
}

TEST_CASE("splits are disjoint, unique and round trip through JSONL") {
  const auto splits = generate_splits(TaskParams{}, 120, 40, 40, 3);
  CHECK(splits.train.size() == 120);
  CHECK(splits.validation.size() == 40);
  CHECK(splits.test.size() == 40);
  std::set<std::string> inputs;
  for (const auto* part : {&splits.train, &splits.validation, &splits.test})
    for (const auto& ex : *part) inputs.insert(ex.input_text);
  CHECK(inputs.size() == 200);
  CHECK_NOTHROW(validate_splits(splits));

  auto bad = splits;
  bad.test.push_back(bad.train.front());
  CHECK_THROWS_AS(validate_splits(bad), InvalidInput);

  const auto dir = oracle::scratch_dir("splits");
  write_splits(dir, splits);
  const auto back = read_splits(dir);
  CHECK(back.train == splits.train);
  CHECK(back.validation == splits.validation);
  CHECK(back.test == splits.test);

  auto ex = splits.train.front();
  ex.input_text = "quote \" and \\ back";
  ex.corrupted = true;
  CHECK(from_jsonl_line(to_jsonl_line(ex)) == ex);
  CHECK_THROWS(from_jsonl_line("{not json"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("tiny task spaces are reported, not looped on") {
  CHECK_THROWS_AS(generate_splits(TaskParams{TaskKind::last_letter, 1}, 150, 30, 30, 1), InvalidInput);
}

namespace {

struct EmitStats {
  int corrupted = 0;
  int n = 0;
  double clean_conf = 0;
  double corrupted_conf = 0;
};

EmitStats emit_many(const NoisyTeacherSpec& spec, int n, TaskKind task = TaskKind::last_letter) {
  CharVocab vocab;
  std::mt19937_64 rng(2024);
  EmitStats s;
  s.n = n;
  int clean = 0;
  for (int i = 0; i < n; ++i) {
    const auto ex = generate_example(TaskParams{task}, static_cast<std::uint64_t>(i));
    const auto em = noisy_teacher_emit(ex, spec, vocab, rng);
    CHECK(em.emitted_target.size() == ex.target_text.size());
    CHECK(em.steps() == ex.target_text.size() + 1);
    const double c = confidence_profile(em.distributions, em.vocab_size, ConfidenceFormula::normalized_entropy).seq_conf;
    if (em.corrupted) {
      ++s.corrupted;
      s.corrupted_conf += c;
      CHECK(em.emitted_input != ex.input_text);
    } else {
      ++clean;
      s.clean_conf += c;
      CHECK(em.emitted_target == ex.target_text);
    }
  }
  if (s.corrupted > 0) s.corrupted_conf /= s.corrupted;
  if (clean > 0) s.clean_conf /= clean;
  return s;
}

// Normalized confidence of a distribution with `peak` on one token and the
// rest spread evenly, computed from the formula directly.
double peaked_confidence(double peak, int v) {
  const double rest = (1 - peak) / (v - 1);
  const double h = -peak * std::log(peak) - (v - 1) * rest * std::log(rest);
  return 1 - h / std::log(static_cast<double>(v));
}

}  // namespace

TEST_CASE("noisy teacher: rho = 0 never corrupts") {
  const auto s = emit_many(NoisyTeacherSpec{0.0, 1.0, 0.9}, 500);
  CHECK(s.corrupted == 0);
  CHECK(s.clean_conf >= peaked_confidence(0.9, CharVocab{}.size()) - 1e-12);
}

TEST_CASE("noisy teacher: rho = 1, kappa = 0 is confidently wrong") {
  const auto clean = emit_many(NoisyTeacherSpec{0.0, 0.0, 0.9}, 300);
  const auto wrong = emit_many(NoisyTeacherSpec{1.0, 0.0, 0.9}, 300);
  CHECK(wrong.corrupted == 300);
  CHECK(std::abs(wrong.corrupted_conf - clean.clean_conf) <= 1e-3);
}

TEST_CASE("noisy teacher: corruption frequency 0.3 +- 0.02 over 10,000 draws") {
  const auto s = emit_many(NoisyTeacherSpec{0.3, 1.0, 0.9}, 10000);
  CHECK(std::abs(s.corrupted / 10000.0 - 0.3) <= 0.02);
  // Calibrated noise separates confidences by at least 0.2.
  CHECK(s.clean_conf - s.corrupted_conf >= 0.2);
}

TEST_CASE("noisy teacher: shuffled objects corruption keeps alignment") {
  const auto s = emit_many(NoisyTeacherSpec{0.5, 1.0, 0.9}, 500, TaskKind::shuffled_objects);
  CHECK(s.corrupted > 150);
  CHECK(s.clean_conf - s.corrupted_conf >= 0.2);
}

TEST_CASE("noisy teacher spec validation") {
  CharVocab vocab;
  std::mt19937_64 rng(1);
  const auto ex = gen_last_letter(3, 1);
  CHECK_THROWS_AS(noisy_teacher_emit(ex, NoisyTeacherSpec{1.5, 1.0, 0.9}, vocab, rng), InvalidInput);
  CHECK_THROWS_AS(noisy_teacher_emit(ex, NoisyTeacherSpec{0.3, -0.1, 0.9}, vocab, rng), InvalidInput);
  CHECK_THROWS_AS(noisy_teacher_emit(ex, NoisyTeacherSpec{0.3, 1.0, 0.001}, vocab, rng), InvalidInput);
}

TEST_CASE("vocabulary") {
  CharVocab v;
  CHECK(v.decode(v.encode("Max Mikey")) == "Max Mikey");
  CHECK(v.decoder_input("ab").front() == CharVocab::kBos);
  CHECK(v.decoder_target("ab").back() == CharVocab::kEos);
  CHECK(v.decoder_input("ab").size() == 3);
  CHECK_THROWS_AS(v.encode("\x01"), InvalidInput);
}
