#include "doctest.h"
#include "oracles.hpp"

#include "gatekd/config.hpp"

using namespace gatekd;

TEST_CASE("defaults") {
  const DistillConfig c;
  CHECK(c.lambdas.soft == 1.0);
  CHECK(c.lambdas.hidden == 0.5);
  CHECK(c.lambdas.attention == 0.1);
  CHECK(c.gating_strategy == GateStrategy::batch_relative);
  CHECK(c.confidence_formula == ConfidenceFormula::normalized_entropy);
  CHECK(c.soft_form == SoftForm::kl);
  CHECK(c.attention_form == AttentionForm::mse);
  CHECK(c.train_size == 2000);
  CHECK(c.val_size == 500);
  CHECK(c.test_size == 500);
  CHECK(c.seeds.size() == 5);
  CHECK(c.micro_batch_size() == 32);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("text round trip covers every key") {
  DistillConfig c;
  c.lambdas = {0.3, 0.0, 0.25};
  c.gating_strategy = GateStrategy::sigmoid;
  c.learning_rate = 1.2345678901234e-4;
  c.seeds = {9, 8};
  c.task.task = TaskKind::shuffled_objects;
  c.data_dir = "some/dir";
  c.hidden_norm = HiddenNorm::raw;
  const auto back = parse_config_text(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(config_diff(back, c).empty());
  CHECK(back.learning_rate == c.learning_rate);
  std::vector<std::string> keys;
  for (const auto& [k, v] : c.to_kv()) keys.push_back(k);
  CHECK(keys == config_keys());
}

TEST_CASE("comments, blank lines and file loading") {
  const auto dir = oracle::scratch_dir("cfg");
  {
    std::ofstream(dir / "a.cfg") << "# header\n\nlambda2 = 0   # inline\n  seeds = 3 , 4\ntask=shuffled_objects\n";
  }
  const auto c = load_config(dir / "a.cfg");
  CHECK(c.lambdas.hidden == 0.0);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(c.task.task == TaskKind::shuffled_objects);
  save_config(c, dir / "b.cfg");
  CHECK(load_config(dir / "b.cfg").to_text() == c.to_text());
  CHECK_THROWS_AS(load_config(dir / "missing.cfg"), InvalidInput);
  std::filesystem::remove_all(dir);
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(parse_config_text("nokey = 1\n"), InvalidInput);
  CHECK_THROWS_AS(parse_config_text("lambda1\n"), InvalidInput);
  CHECK_THROWS_AS(parse_config_text("lambda1 = abc\n"), InvalidInput);
  CHECK_THROWS_AS(parse_config_text("batch_size = 1.5\n"), InvalidInput);
  CHECK_THROWS_AS(parse_config_text("gating_strategy = sometimes\n"), InvalidInput);
  CHECK_THROWS_AS(parse_config_text("identity_projection = maybe\n"), InvalidInput);
}

TEST_CASE("overrides apply after the file") {
  DistillConfig c;
  apply_overrides(c, {"lambda1=0", "lambda2 = 0", "lambda3=0", "seeds=1"});
  CHECK(c.lambdas.soft == 0.0);
  CHECK(c.lambdas.hidden == 0.0);
  CHECK(c.lambdas.attention == 0.0);
  CHECK(c.seeds == std::vector<std::uint64_t>{1});
  CHECK_THROWS_AS(apply_overrides(c, {"lambda1"}), InvalidInput);
  CHECK_THROWS_AS(apply_overrides(c, {"bogus=1"}), InvalidInput);
}

TEST_CASE("validation") {
  auto bad = [](const std::string& kv) {
    DistillConfig c;
    apply_overrides(c, {kv});
    return c;
  };
  CHECK_THROWS_AS(bad("lambda1=-1").validate(), InvalidInput);
  CHECK_THROWS_AS(bad("batch_size=10").validate(), InvalidInput);
  CHECK_THROWS_AS(bad("precision=16").validate(), InvalidInput);
  CHECK_THROWS_AS(bad("student_layers=8").validate(), InvalidInput);
  CHECK_THROWS_AS(bad("warmup_fraction=1").validate(), InvalidInput);
  CHECK_NOTHROW(bad("patience=0").validate());
}

TEST_CASE("config_diff names exactly the differing keys") {
  DistillConfig a, b;
  b.lambdas.hidden = 0;
  b.hidden_gate_always_open = true;
  CHECK(config_diff(a, b) == std::vector<std::string>{"lambda2", "hidden_gate_always_open"});
}
