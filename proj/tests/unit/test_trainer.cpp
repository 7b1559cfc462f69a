#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

#include "gatekd/trainer.hpp"

#include <cmath>
#include <set>

using namespace gatekd;

TEST_CASE("exact match examples") {
  const std::vector<std::string> a{"xyay", "ab"};
  CHECK(exact_match(a, a) == 1.0);
  CHECK(exact_match(a, std::vector<std::string>{"q", "r"}) == 0.0);
  CHECK(exact_match(a, std::vector<std::string>{"xyay", "ba"}) == 0.5);
  CHECK(exact_match(std::vector<std::string>{" xyay\n"}, std::vector<std::string>{"xyay"}) == 1.0);
  CHECK_THROWS_AS(exact_match(a, std::vector<std::string>{"x"}), InvalidInput);
}

TEST_CASE("unit_rows standardizes each step to unit length") {
  Mat<double> h(3, 8);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = std::sin(1.7 * static_cast<double>(i)) * 5 + 2;
  const auto u = unit_rows(h);
  for (Eigen::Index r = 0; r < 3; ++r) {
    CHECK(std::abs(u.row(r).sum()) < 1e-12);
    CHECK(u.row(r).norm() == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("teacher cache: one entry per example, independent of order") {
  fixture::Bench<double> b(fixture::tiny_config());
  REQUIRE(b.cache.signals.size() == b.splits.train.size());
  CHECK(b.cache.teacher_checksum == b.teacher->checksum());
  auto reversed = b.splits.train;
  std::reverse(reversed.begin(), reversed.end());
  const auto rc = build_teacher_cache<double>(*b.teacher, reversed, b.cfg.noise, b.cfg.teacher_seed, b.vocab);
  const auto n = b.splits.train.size();
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(rc.signals[n - 1 - i].soft == b.cache.signals[i].soft);
    CHECK(rc.signals[n - 1 - i].corrupted == b.cache.signals[i].corrupted);
  }
  for (const auto& s : b.cache.signals) {
    CHECK(s.hidden.size() == 2);
    CHECK(s.attention.size() == 2);
    CHECK(s.soft.rows() == static_cast<Eigen::Index>(s.emitted_target.size() + 1));
  }
}

TEST_CASE("gradient accumulation equals one large batch") {
  auto cfg = fixture::tiny_config();
  cfg.batch_size = 8;
  fixture::Bench<double> b(cfg);
  const auto items = b.items(0, 8);
  const auto map = b.map();
  auto one = b.student(), acc = b.student();
  AdamW<double> o1(one.trainable(), {}), o2(acc.trainable(), {});
  cfg.grad_accum_steps = 1;
  distill_step<double>(items, one, o1, 1e-2, cfg, map);
  cfg.grad_accum_steps = 4;
  distill_step<double>(items, acc, o2, 1e-2, cfg, map);
  CHECK(fixture::max_param_diff(one.model, acc.model) <= 1e-6);
  for (std::size_t k = 0; k < one.projections.size(); ++k)
    CHECK((one.projections[k].value - acc.projections[k].value).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("zero lambdas equal a plain supervised step") {
  auto cfg = fixture::tiny_config();
  cfg.lambdas = Lambdas{0, 0, 0};
  fixture::Bench<double> b(cfg);
  const auto items = b.items(0, 4);
  auto s = b.student();
  auto ref = b.student();
  AdamW<double> os(s.trainable(), {});
  std::vector<Param<double>*> rp;
  for (auto& p : ref.model.params()) rp.push_back(&p);
  AdamW<double> oref(rp, {});
  distill_step<double>(items, s, os, 1e-2, cfg, b.map());
  fixture::reference_kd_gradients(ref.model, items, 0.0);
  oref.step(1e-2);
  CHECK(fixture::max_param_diff(s.model, ref.model) <= 1e-7);
}

TEST_CASE("no gating, confidence one, soft loss only equals vanilla KD") {
  auto cfg = fixture::tiny_config();
  cfg.gating_strategy = GateStrategy::none;
  cfg.force_confidence_one = true;
  cfg.lambdas = Lambdas{1.0, 0, 0};
  fixture::Bench<double> b(cfg);
  const auto items = b.items(4, 4);
  auto s = b.student();
  auto ref = b.student();
  const auto out = accumulate_gradients<double>(items, s, cfg, b.map());
  for (double w : out.soft_weights) CHECK(w == 1.0);
  fixture::reference_kd_gradients(ref.model, items, 1.0);
  CHECK(fixture::max_grad_diff(s.model, ref.model) <= 1e-10);
}

TEST_CASE("closed gates leave only the task gradient") {
  auto cfg = fixture::tiny_config();
  cfg.noise.error_rate = 0.0;  // identical confidences: every batch-relative gate closes
  fixture::Bench<double> b(cfg);
  // Equal-length targets give identical clean confidences.
  const auto items = b.items(0, 4);
  auto s = b.student();
  auto ref = b.student();
  const auto out = accumulate_gradients<double>(items, s, cfg, b.map());
  for (double g : out.gates) CHECK(g == 0.0);
  CHECK(out.breakdown.soft_loss == 0.0);
  CHECK(out.breakdown.hidden_loss == 0.0);
  CHECK(out.breakdown.attention_loss == 0.0);
  fixture::reference_kd_gradients(ref.model, items, 0.0);
  CHECK(fixture::max_grad_diff(s.model, ref.model) <= 1e-8);
  for (const auto& p : s.projections) CHECK(p.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("corrupted high-entropy examples in a clean majority are gated out") {
  auto cfg = fixture::tiny_config();
  cfg.noise.error_rate = 0.3;
  fixture::Bench<double> b(cfg);
  std::vector<StepItem<double>> batch;
  std::size_t corrupted = 0;
  for (std::size_t i = 0; i < b.splits.train.size() && batch.size() < 6; ++i) {
    if (b.cache.signals[i].corrupted) {
      if (corrupted == 2) continue;
      ++corrupted;
    } else if (batch.size() - corrupted >= 4) {
      continue;
    }
    batch.push_back({i, &b.encoded[i], &b.cache.signals[i]});
  }
  REQUIRE(corrupted >= 1);
  auto s = b.student();
  const auto out = accumulate_gradients<double>(batch, s, cfg, b.map());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].teacher->corrupted) {
      CHECK(out.gates[i] == 0.0);
      CHECK(out.soft_weights[i] == 0.0);
    } else {
      CHECK(out.gates[i] == 1.0);
    }
  }
}

TEST_CASE("non-finite teacher signal aborts the step and names the example") {
  auto cfg = fixture::tiny_config();
  fixture::Bench<double> b(cfg);
  cfg.gating_strategy = GateStrategy::none;
  for (auto& h : b.cache.signals[2].hidden) h(0, 0) = std::nan("");
  auto s = b.student();
  try {
    (void)accumulate_gradients<double>(b.items(0, 4), s, cfg, b.map());
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(std::string(e.what()).find("[2]") != std::string::npos);
  }
}

TEST_CASE("training runs replay exactly and never touch the teacher") {
  auto cfg = fixture::tiny_config();
  fixture::Bench<double> b(cfg);
  const auto before = b.teacher->checksum();
  const auto r1 = train_run<double>(cfg, b.context(), 3);
  const auto r2 = train_run<double>(cfg, b.context(), 3);
  REQUIRE(r1.steps.size() == r2.steps.size());
  for (std::size_t i = 0; i < r1.steps.size(); ++i) CHECK(r1.steps[i].total == r2.steps[i].total);
  CHECK(r1.student_checksum == r2.student_checksum);
  CHECK(r1.val_accuracy == r2.val_accuracy);
  CHECK(r1.test_accuracy == r2.test_accuracy);
  CHECK(r1.teacher_checksum_before == before);
  CHECK(r1.teacher_checksum_after == before);
  CHECK(b.teacher->checksum() == before);
  CHECK(r1.steps.size() == 2 * 4);
  CHECK(r1.gate_stats.size() == r1.val_accuracy.size());

  const auto r3 = train_run<double>(cfg, b.context(), 4);
  CHECK(r3.student_checksum != r1.student_checksum);
}

TEST_CASE("patience 0 stops after one validation round") {
  auto cfg = fixture::tiny_config();
  cfg.patience = 0;
  cfg.max_epochs = 5;
  fixture::Bench<double> b(cfg);
  const auto r = train_run<double>(cfg, b.context(), 3);
  CHECK(r.val_accuracy.size() == 1);
  CHECK(r.best_epoch == 1);
  CHECK(r.early_stopped);
}

TEST_CASE("gate statistics split clean and corrupted examples") {
  auto cfg = fixture::tiny_config();
  cfg.noise.error_rate = 0.5;
  fixture::Bench<double> b(cfg);
  const auto r = train_run<double>(cfg, b.context(), 3);
  std::size_t corrupted = 0;
  for (const auto& s : b.cache.signals) corrupted += s.corrupted;
  for (const auto& e : r.gate_stats) {
    CHECK(e.corrupted_count == corrupted);
    CHECK(e.clean_count == b.splits.train.size() - corrupted);
    CHECK(e.clean_open_rate >= 0.0);
    CHECK(e.clean_open_rate <= 1.0);
  }
}

TEST_CASE("self-distillation from the teacher's own weights does not lose accuracy") {
  // A teacher trained briefly, then a student with the teacher's
  // architecture and weights distilled from it at confidence 1.
  auto cfg = fixture::tiny_config();
  cfg.train_size = 40;
  cfg.teacher_epochs = 15;
  cfg.teacher_lr = 3e-3;
  cfg.student_layers = cfg.teacher_layers;
  cfg.student_dim = cfg.teacher_dim;
  cfg.student_heads = cfg.teacher_heads;
  cfg.force_confidence_one = true;
  cfg.gating_strategy = GateStrategy::none;
  cfg.identity_projection = true;
  cfg.noise.error_rate = 0.0;
  const auto splits = load_or_generate_splits(cfg);
  auto trained = train_teacher<double>(cfg, splits);
  const FrozenModel<double>& teacher = *trained.teacher;
  CharVocab vocab;
  const auto cache = build_teacher_cache<double>(teacher, splits.train, cfg.noise, cfg.teacher_seed, vocab);
  Student<double> s(student_model_config(cfg, vocab), cfg.teacher_dim, true, 1);
  s.model.copy_values_from(teacher.model());
  const double before = evaluate_exact_match(s.model, splits.validation, vocab);
  std::vector<EncodedExample> enc;
  for (const auto& ex : splits.train) enc.push_back(encode_example(ex, vocab));
  AdamW<double> opt(s.trainable(), {});
  const auto map = uniform_layer_map(cfg.student_layers, cfg.teacher_layers);
  for (std::size_t start = 0; start + 4 <= enc.size(); start += 4) {
    std::vector<StepItem<double>> batch;
    for (std::size_t i = start; i < start + 4; ++i) batch.push_back({i, &enc[i], &cache.signals[i]});
    distill_step<double>(batch, s, opt, 1e-5, cfg, map);
  }
  CHECK(evaluate_exact_match(s.model, splits.validation, vocab) >= before);
}

TEST_CASE("teacher training pool extends the train split without leaking evaluation inputs") {
  auto cfg = fixture::tiny_config();
  cfg.teacher_train_size = 60;
  const auto splits = load_or_generate_splits(cfg);
  const auto pool = teacher_training_splits(cfg, splits);
  REQUIRE(pool.train.size() == 60);
  for (std::size_t i = 0; i < splits.train.size(); ++i) CHECK(pool.train[i] == splits.train[i]);
  CHECK_NOTHROW(validate_splits(pool));
  cfg.teacher_train_size = 0;
  CHECK(teacher_training_splits(cfg, splits).train.size() == splits.train.size());
}

TEST_CASE("run record files") {
  auto cfg = fixture::tiny_config();
  cfg.noise.error_rate = 0.0;
  fixture::Bench<double> b(cfg);
  const auto r = train_run<double>(cfg, b.context(), 3);
  const auto dir = oracle::scratch_dir("record");
  write_run_record(r, dir);
  for (const char* f : {"metrics.csv", "gates.csv", "run.json", "config.cfg"}) CHECK(std::filesystem::exists(dir / f));
  const std::string metrics = oracle::slurp(dir / "metrics.csv");
  CHECK(metrics.rfind("step,task_loss,soft_loss,hidden_loss,attention_loss,total,gate_open_fraction,mean_confidence\n", 0) == 0);
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == static_cast<long>(r.steps.size() + 1));
  const std::string gates = oracle::slurp(dir / "gates.csv");
  // No corrupted examples: the corrupted rows carry a zero count and empty rates.
  CHECK(gates.find(",corrupted,0,,") != std::string::npos);
  CHECK(load_config(dir / "config.cfg").to_text() == cfg.to_text());
  std::filesystem::remove_all(dir);
}
