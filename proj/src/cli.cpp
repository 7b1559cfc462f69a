// SPDX-License-Identifier: Apache-2.0
#include "gatekd/cli.hpp"

#include "gatekd/evalkit.hpp"
#include "gatekd/verify.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <ostream>

namespace gatekd {

namespace {

// Config and usage problems map to exit 2; everything after the config is
// accepted is a runtime failure.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::string config_path;
  std::string output_dir;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool need_output) {
  cmd->add_option("-c,--config", c.config_path, "config file (key = value lines)");
  auto* o = cmd->add_option("-o,--output", c.output_dir, "output directory");
  if (need_output) o->required();
  cmd->add_option("--overrides", c.overrides, "key=value assignments applied after the config file");
}

DistillConfig resolve_config(const Common& c) {
  try {
    DistillConfig cfg = c.config_path.empty() ? DistillConfig{} : load_config(c.config_path);
    apply_overrides(cfg, c.overrides);
    cfg.validate();
    return cfg;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

std::vector<TaskKind> resolve_tasks(const std::vector<std::string>& names, const DistillConfig& cfg) {
  std::vector<TaskKind> tasks;
  try {
    for (const auto& n : names) tasks.push_back(parse_task(n));
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (tasks.empty()) tasks.push_back(cfg.task.task);
  return tasks;
}

template <typename T>
int run_distill(DistillConfig cfg, const std::filesystem::path& out_dir, std::ostream& out) {
  std::filesystem::create_directories(out_dir);
  save_config(cfg, out_dir / "config.cfg");
  if (cfg.teacher_checkpoint.empty()) cfg.teacher_checkpoint = (out_dir / "teacher").string();

  const DatasetSplits splits = load_or_generate_splits(cfg);
  const FrozenModel<T> teacher = obtain_teacher<T>(cfg, splits);
  CharVocab vocab;
  const TeacherCache<T> cache = build_teacher_cache<T>(teacher, splits.train, cfg.noise, cfg.teacher_seed, vocab);
  const TrainContext<T> ctx{&splits, &teacher, &cache};

  nlohmann::ordered_json summary;
  summary["teacher_checksum"] = cache.teacher_checksum;
  summary["runs"] = nlohmann::ordered_json::array();
  for (auto seed : cfg.seeds) {
    RunRecord rec = train_run<T>(cfg, ctx, seed);
    const auto dir = out_dir / ("seed_" + std::to_string(seed));
    write_run_record(rec, dir);
    out << "seed " << seed << ": test exact match " << rec.test_accuracy << " (best epoch " << rec.best_epoch
        << ")\n";
    summary["runs"].push_back({{"seed", seed}, {"dir", dir.filename().string()}, {"test_accuracy", rec.test_accuracy}});
    require(rec.teacher_checksum_after == cache.teacher_checksum, "teacher parameters changed during training");
  }
  std::ofstream(out_dir / "summary.json", std::ios::binary) << summary.dump(2) << '\n';
  return kExitOk;
}

template <typename T>
int run_experiment(DistillConfig cfg, const std::filesystem::path& out_dir, const std::vector<TaskKind>& tasks,
                   bool gating, bool loss_removal, std::ostream& out) {
  std::filesystem::create_directories(out_dir);
  save_config(cfg, out_dir / "base_config.cfg");
  if (cfg.teacher_checkpoint.empty()) cfg.teacher_checkpoint = (out_dir / "teachers").string();
  std::vector<TaskBench<T>> benches;
  for (auto t : tasks) {
    benches.push_back(make_task_bench<T>(cfg, t));
    if (benches.back().teacher_test_accuracy >= 0)
      out << "teacher (" << to_string(t) << "): test exact match " << benches.back().teacher_test_accuracy << '\n';
  }
  ExperimentMatrix m = gating ? run_gating_comparison<T>(cfg, benches, out_dir)
                              : run_ablation<T>(cfg, benches, out_dir, loss_removal);
  emit_report(m, out_dir);
  out << format_report_table(m);
  return m.complete() ? kExitOk : kExitFailure;
}

template <typename Fn>
int with_precision(const DistillConfig& cfg, Fn&& fn) {
  return cfg.precision == 64 ? fn(double{}) : fn(float{});
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Confidence-gated knowledge distillation at desk scale", "gatekd"};
  app.require_subcommand(1);

  Common gen_c, dist_c, abl_c, cmp_c;
  std::string task_name = "last_letter";
  std::uint64_t data_seed = 0;
  bool seed_given = false;

  auto* gen = app.add_subcommand("gen-data", "generate train/validation/test JSONL splits");
  add_common(gen, gen_c, true);
  gen->add_option("--task", task_name, "last_letter or shuffled_objects");
  gen->add_option("--seed", data_seed, "data seed")->each([&](const std::string&) { seed_given = true; });

  auto* dist = app.add_subcommand("distill", "train students against a frozen teacher, one run per seed");
  add_common(dist, dist_c, true);

  std::vector<std::string> abl_tasks, cmp_tasks;
  bool loss_removal = false;
  auto* abl = app.add_subcommand("ablate", "full model against gate ablations, seeds aggregated");
  add_common(abl, abl_c, true);
  abl->add_option("--tasks", abl_tasks, "tasks to run (default: the config task)");
  abl->add_flag("--loss-removal", loss_removal, "also run the lambda2=0 and lambda3=0 variants");

  auto* cmp = app.add_subcommand("compare-gating", "no gating, fixed threshold, sigmoid and batch-relative");
  add_common(cmp, cmp_c, true);
  cmp->add_option("--tasks", cmp_tasks, "tasks to run (default: the config task)");

  std::string run_dir;
  auto* gs = app.add_subcommand("gate-stats", "per-epoch gate-open rates split by corrupted flag");
  gs->add_option("run_dir", run_dir, "run directory holding metrics.csv and gates.csv")->required();

  auto* ver = app.add_subcommand("verify", "run the invariant suite");

  auto fail = [&](int code, std::string_view kind, const std::string& msg) {
    nlohmann::ordered_json j{{"error", kind}, {"message", msg}};
    err << j.dump() << '\n';
    if (code == kExitUsage) err << app.help();
    return code;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return fail(kExitUsage, "usage", e.what());
  }

  try {
    if (*gen) {
      DistillConfig cfg = resolve_config(gen_c);
      try {
        cfg.task.task = parse_task(task_name);
      } catch (const std::exception& e) {
        throw UsageError(e.what());
      }
      if (seed_given) cfg.data_seed = data_seed;
      const std::filesystem::path dir = gen_c.output_dir;
      std::filesystem::create_directories(dir);
      save_config(cfg, dir / "config.cfg");
      cfg.data_dir.clear();
      write_splits(dir, load_or_generate_splits(cfg));
      out << "wrote " << cfg.train_size << "/" << cfg.val_size << "/" << cfg.test_size << " examples to " << dir.string()
          << '\n';
      return kExitOk;
    }
    if (*dist) {
      DistillConfig cfg = resolve_config(dist_c);
      return with_precision(cfg, [&](auto tag) { return run_distill<decltype(tag)>(cfg, dist_c.output_dir, out); });
    }
    if (*abl) {
      DistillConfig cfg = resolve_config(abl_c);
      auto tasks = resolve_tasks(abl_tasks, cfg);
      return with_precision(cfg, [&](auto tag) {
        return run_experiment<decltype(tag)>(cfg, abl_c.output_dir, tasks, false, loss_removal, out);
      });
    }
    if (*cmp) {
      DistillConfig cfg = resolve_config(cmp_c);
      auto tasks = resolve_tasks(cmp_tasks, cfg);
      return with_precision(
          cfg, [&](auto tag) { return run_experiment<decltype(tag)>(cfg, cmp_c.output_dir, tasks, true, false, out); });
    }
    if (*gs) {
      out << format_gate_summary(read_gate_summary(run_dir));
      return kExitOk;
    }
    if (*ver) {
      const auto t0 = std::chrono::steady_clock::now();
      int failed = 0;
      for (const auto& r : run_invariant_suite()) {
        out << (r.passed ? "PASS " : "FAIL ") << r.name;
        if (!r.detail.empty()) out << ": " << r.detail;
        out << '\n';
        failed += !r.passed;
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out << (failed == 0 ? "all checks passed" : std::to_string(failed) + " check(s) failed") << " in " << secs
          << " s\n";
      return failed == 0 ? kExitOk : kExitFailure;
    }
  } catch (const UsageError& e) {
    return fail(kExitUsage, "usage", e.what());
  } catch (const NonFiniteLoss& e) {
    return fail(kExitFailure, "non_finite_loss", e.what());
  } catch (const std::exception& e) {
    return fail(kExitFailure, "runtime", e.what());
  }
  return kExitUsage;
}

}  // namespace gatekd
