// SPDX-License-Identifier: Apache-2.0
#include "gatekd/evalkit.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace gatekd {

namespace {

std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw InvalidInput("bad number in " + what + ": '" + s + "'");
}

}  // namespace

DistillConfig VariantSpec::apply(const DistillConfig& base) const {
  DistillConfig c = base;
  for (const auto& [k, v] : delta) c.set(k, v);
  return c;
}

VariantSpec full_variant() { return {"full", {}}; }

VariantSpec vanilla_kd_variant() {
  return {"Vanilla-KD",
          {{"gating_strategy", "none"}, {"force_confidence_one", "true"}, {"lambda2", "0"}, {"lambda3", "0"}}};
}

std::vector<VariantSpec> ablation_variants() {
  return {
      full_variant(),
      {"w/o confidence gating", {{"gating_strategy", "none"}, {"force_confidence_one", "true"}}},
      {"w/o hidden-state gate", {{"hidden_gate_always_open", "true"}}},
      {"w/o attention gate", {{"attention_gate_always_open", "true"}}},
  };
}

std::vector<VariantSpec> loss_removal_variants() {
  return {{"w/o hidden-state loss", {{"lambda2", "0"}}}, {"w/o attention loss", {{"lambda3", "0"}}}};
}

std::vector<VariantSpec> gating_variants(double tau) {
  char t[32];
  std::snprintf(t, sizeof t, "%g", tau);
  return {
      {"No gating", {{"gating_strategy", "none"}, {"force_confidence_one", "true"}}},
      {std::string("Fixed threshold (tau=") + t + ")", {{"gating_strategy", "fixed_threshold"}, {"gate_tau", t}}},
      {"Sigmoid weighting", {{"gating_strategy", "sigmoid"}, {"gate_tau", t}}},
      {"Batch-relative", {{"gating_strategy", "batch_relative"}}},
  };
}

template <typename T>
TaskBench<T> make_task_bench(const DistillConfig& base, TaskKind task) {
  DistillConfig cfg = base;
  cfg.task.task = task;
  if (!cfg.teacher_checkpoint.empty())
    cfg.teacher_checkpoint = (std::filesystem::path(cfg.teacher_checkpoint) / to_string(task)).string();
  TaskBench<T> b;
  b.task = task;
  b.splits = load_or_generate_splits(cfg);
  const bool cached = !cfg.teacher_checkpoint.empty() &&
                      std::filesystem::exists(std::filesystem::path(cfg.teacher_checkpoint) / "manifest.json");
  if (cached) {
    b.teacher.emplace(obtain_teacher<T>(cfg, b.splits));
  } else {
    TeacherTraining<T> tt = train_teacher<T>(cfg, b.splits);
    b.teacher_test_accuracy = tt.test_accuracy;
    if (!cfg.teacher_checkpoint.empty()) save_checkpoint(tt.teacher->model(), cfg.teacher_checkpoint);
    b.teacher.emplace(std::move(*tt.teacher));
  }
  CharVocab vocab;
  b.cache.emplace(build_teacher_cache<T>(*b.teacher, b.splits.train, cfg.noise, cfg.teacher_seed, vocab));
  return b;
}

double CellResult::mean() const {
  if (accuracies.empty()) return 0.0;
  return std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / static_cast<double>(accuracies.size());
}

double CellResult::stddev() const {
  if (accuracies.size() < 2) return 0.0;
  const double m = mean();
  double ss = 0.0;
  for (double a : accuracies) ss += (a - m) * (a - m);
  return std::sqrt(ss / static_cast<double>(accuracies.size() - 1));
}

const CellResult& ExperimentMatrix::cell(const std::string& variant, TaskKind task) const {
  for (const auto& c : cells)
    if (c.variant == variant && c.task == task) return c;
  throw InvalidInput("no cell for variant '" + variant + "' on task " + std::string(to_string(task)));
}

bool ExperimentMatrix::complete() const {
  if (cells.size() != variants.size() * tasks.size()) return false;
  for (const auto& c : cells)
    if (!c.error.empty() || c.accuracies.size() != seeds.size()) return false;
  return true;
}

template <typename T>
ExperimentMatrix run_matrix(const DistillConfig& base, const std::vector<VariantSpec>& variants,
                            std::span<const TaskBench<T>> benches, const std::filesystem::path& out_dir) {
  ExperimentMatrix m;
  m.variants = variants;
  m.seeds = base.seeds;
  for (const auto& b : benches) m.tasks.push_back(b.task);

  for (const auto& v : variants) {
    for (const auto& bench : benches) {
      CellResult cell;
      cell.variant = v.name;
      cell.task = bench.task;
      try {
        DistillConfig cfg = v.apply(base);
        cfg.task.task = bench.task;
        cfg.validate();
        std::filesystem::path cell_dir;
        if (!out_dir.empty()) {
          cell_dir = out_dir / slugify(v.name) / to_string(bench.task);
          save_config(cfg, cell_dir / "config.cfg");
        }
        const TrainContext<T> ctx = bench.context();
        for (auto seed : cfg.seeds) {
          RunRecord rec = train_run<T>(cfg, ctx, seed);
          if (!cell_dir.empty()) write_run_record(rec, cell_dir / ("seed_" + std::to_string(seed)));
          cell.seeds.push_back(seed);
          cell.accuracies.push_back(rec.test_accuracy);
          cell.runs.push_back(std::move(rec));
        }
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      m.cells.push_back(std::move(cell));
    }
  }
  return m;
}

template <typename T>
ExperimentMatrix run_ablation(const DistillConfig& base, std::span<const TaskBench<T>> benches,
                              const std::filesystem::path& out_dir, bool include_loss_removal) {
  auto variants = ablation_variants();
  if (include_loss_removal)
    for (auto& v : loss_removal_variants()) variants.push_back(std::move(v));
  return run_matrix<T>(base, variants, benches, out_dir);
}

template <typename T>
ExperimentMatrix run_gating_comparison(const DistillConfig& base, std::span<const TaskBench<T>> benches,
                                       const std::filesystem::path& out_dir) {
  return run_matrix<T>(base, gating_variants(base.gate_tau), benches, out_dir);
}

std::vector<ReportRow> report_rows(const ExperimentMatrix& m) {
  std::vector<ReportRow> rows;
  for (const auto& c : m.cells)
    rows.push_back({c.variant, std::string(to_string(c.task)), c.accuracies.size(), 100.0 * c.mean(),
                    100.0 * c.stddev()});
  return rows;
}

std::string format_report_table(const ExperimentMatrix& m) {
  std::vector<std::string> header{"Variant"};
  for (auto t : m.tasks) header.emplace_back(to_string(t));
  std::vector<std::vector<std::string>> table{header};
  for (const auto& v : m.variants) {
    std::vector<std::string> row{v.name};
    for (auto t : m.tasks) {
      const CellResult* c = nullptr;
      for (const auto& x : m.cells)
        if (x.variant == v.name && x.task == t) c = &x;
      std::string s;
      if (c == nullptr) {
        s = "missing";
      } else if (c->accuracies.empty()) {
        s = "FAILED";
      } else {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.1f ± %.1f", 100.0 * c->mean(), 100.0 * c->stddev());
        s = buf;
        if (c->accuracies.size() != m.seeds.size())
          s += " (partial " + std::to_string(c->accuracies.size()) + "/" + std::to_string(m.seeds.size()) + ")";
      }
      row.push_back(s);
    }
    table.push_back(std::move(row));
  }
  // Column widths count code points so the ± sign lines up.
  auto width = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
  };
  std::vector<std::size_t> w(header.size(), 0);
  for (const auto& r : table)
    for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], width(r[i]));
  std::ostringstream os;
  for (std::size_t ri = 0; ri < table.size(); ++ri) {
    for (std::size_t i = 0; i < table[ri].size(); ++i) {
      os << table[ri][i] << std::string(w[i] - width(table[ri][i]), ' ');
      if (i + 1 < table[ri].size()) os << " | ";
    }
    os << '\n';
    if (ri == 0) {
      for (std::size_t i = 0; i < w.size(); ++i) os << std::string(w[i], '-') << (i + 1 < w.size() ? "-+-" : "");
      os << '\n';
    }
  }
  for (const auto& c : m.cells)
    if (!c.error.empty()) os << "error [" << c.variant << " / " << to_string(c.task) << "]: " << c.error << '\n';
  return os.str();
}

void emit_report(const ExperimentMatrix& m, const std::filesystem::path& dir) {
  require(!m.cells.empty() && !m.variants.empty() && !m.tasks.empty(), "emit_report: empty experiment matrix");
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.csv", std::ios::binary);
    require(static_cast<bool>(out), "emit_report: cannot write " + (dir / "report.csv").string());
    out << "variant,task,seed_count,mean,std\n";
    for (const auto& r : report_rows(m))
      out << r.variant << ',' << r.task << ',' << r.seed_count << ',' << fmt_full(r.mean) << ',' << fmt_full(r.std)
          << '\n';
  }
  std::ofstream txt(dir / "report.txt", std::ios::binary);
  txt << format_report_table(m);
  if (!m.complete()) txt << "WARNING: matrix is partial; see marked cells\n";
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "variant,task,seed_count,mean,std", "unexpected report header in " + path.string());
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    require(f.size() == 5, "malformed report row: " + line);
    rows.push_back({f[0], f[1], static_cast<std::size_t>(std::stoull(f[2])), to_double(f[3], "report"),
                    to_double(f[4], "report")});
  }
  return rows;
}

std::string slugify(std::string_view name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!out.empty() && out.back() != '_') {
      out += '_';
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out.empty() ? "variant" : out;
}

bool GateSummary::corrupted_empty() const {
  for (const auto& e : epochs)
    if (e.corrupted_count > 0) return false;
  return true;
}

GateSummary read_gate_summary(const std::filesystem::path& run_dir) {
  const auto metrics = run_dir / "metrics.csv";
  const auto gates = run_dir / "gates.csv";
  require(std::filesystem::exists(metrics), "missing metrics file: " + metrics.string());
  require(std::filesystem::exists(gates), "missing gate log: " + gates.string());
  GateSummary s;
  {
    std::ifstream in(metrics);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line))
      if (!line.empty()) ++s.steps;
  }
  std::ifstream in(gates);
  std::string line;
  std::getline(in, line);
  std::map<int, EpochGateStats> by_epoch;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    require(f.size() == 5, "malformed gate row: " + line);
    const int epoch = std::stoi(f[0]);
    auto& e = by_epoch[epoch];
    e.epoch = epoch;
    const std::size_t count = std::stoull(f[2]);
    const double open = f[3].empty() ? 0.0 : to_double(f[3], "gates.csv");
    const double conf = f[4].empty() ? 0.0 : to_double(f[4], "gates.csv");
    if (f[1] == "clean") {
      e.clean_count = count;
      e.clean_open_rate = open;
      e.clean_mean_confidence = conf;
    } else if (f[1] == "corrupted") {
      e.corrupted_count = count;
      e.corrupted_open_rate = open;
      e.corrupted_mean_confidence = conf;
    } else {
      throw InvalidInput("unknown split in gates.csv: " + f[1]);
    }
  }
  for (auto& [_, e] : by_epoch) s.epochs.push_back(e);
  return s;
}

std::string format_gate_summary(const GateSummary& s) {
  std::ostringstream os;
  char buf[160];
  os << "steps: " << s.steps << '\n';
  if (s.epochs.empty()) {
    os << "no gate statistics (run had no teacher signals)\n";
    return os.str();
  }
  os << "epoch  clean_n  clean_open  clean_conf  corrupt_n  corrupt_open  corrupt_conf\n";
  for (const auto& e : s.epochs) {
    std::snprintf(buf, sizeof buf, "%5d  %7zu  %10.4f  %10.4f  %9zu  ", e.epoch, e.clean_count, e.clean_open_rate,
                  e.clean_mean_confidence, e.corrupted_count);
    os << buf;
    if (e.corrupted_count > 0) {
      std::snprintf(buf, sizeof buf, "%12.4f  %12.4f", e.corrupted_open_rate, e.corrupted_mean_confidence);
      os << buf;
    } else {
      os << std::string(12, ' ') << '-' << std::string(13, ' ') << '-';
    }
    os << '\n';
  }
  if (s.corrupted_empty()) os << "corrupted split: empty\n";
  return os.str();
}

#define GATEKD_INSTANTIATE(T)                                                                                   \
  template TaskBench<T> make_task_bench<T>(const DistillConfig&, TaskKind);                                     \
  template ExperimentMatrix run_matrix<T>(const DistillConfig&, const std::vector<VariantSpec>&,                \
                                          std::span<const TaskBench<T>>, const std::filesystem::path&);         \
  template ExperimentMatrix run_ablation<T>(const DistillConfig&, std::span<const TaskBench<T>>,                \
                                            const std::filesystem::path&, bool);                                \
  template ExperimentMatrix run_gating_comparison<T>(const DistillConfig&, std::span<const TaskBench<T>>,       \
                                                     const std::filesystem::path&);

GATEKD_INSTANTIATE(float)
GATEKD_INSTANTIATE(double)

#undef GATEKD_INSTANTIATE

}  // namespace gatekd
