// SPDX-License-Identifier: Apache-2.0
#include "gatekd/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace gatekd {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  require(res.ec == std::errc() && res.ptr == v.data() + v.size(), "config: bad number for " + key + ": " + v);
  return out;
}

template <typename I>
I parse_int(const std::string& key, const std::string& v) {
  I out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  require(res.ec == std::errc() && res.ptr == v.data() + v.size(), "config: bad integer for " + key + ": " + v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidInput("config: bad boolean for " + key + ": " + v);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<std::string(const DistillConfig&)> get;
  std::function<void(DistillConfig&, const std::string&)> set;
};

#define GK_DOUBLE(name, member)                                                  \
  Field{name, [](const DistillConfig& c) { return fmt_double(c.member); },       \
        [](DistillConfig& c, const std::string& v) { c.member = parse_double(name, v); }}
#define GK_INT(name, member, type)                                               \
  Field{name, [](const DistillConfig& c) { return std::to_string(c.member); },   \
        [](DistillConfig& c, const std::string& v) { c.member = parse_int<type>(name, v); }}
#define GK_BOOL(name, member)                                                    \
  Field{name, [](const DistillConfig& c) { return fmt_bool(c.member); },         \
        [](DistillConfig& c, const std::string& v) { c.member = parse_bool(name, v); }}
#define GK_STRING(name, member)                                                  \
  Field{name, [](const DistillConfig& c) { return c.member; },                   \
        [](DistillConfig& c, const std::string& v) { c.member = v; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      GK_DOUBLE("lambda1", lambdas.soft),
      GK_DOUBLE("lambda2", lambdas.hidden),
      GK_DOUBLE("lambda3", lambdas.attention),
      Field{"gating_strategy", [](const DistillConfig& c) { return std::string(to_string(c.gating_strategy)); },
            [](DistillConfig& c, const std::string& v) { c.gating_strategy = parse_gate_strategy(v); }},
      Field{"confidence_formula",
            [](const DistillConfig& c) { return std::string(to_string(c.confidence_formula)); },
            [](DistillConfig& c, const std::string& v) { c.confidence_formula = parse_confidence_formula(v); }},
      Field{"soft_form", [](const DistillConfig& c) { return std::string(to_string(c.soft_form)); },
            [](DistillConfig& c, const std::string& v) { c.soft_form = parse_soft_form(v); }},
      Field{"attention_form", [](const DistillConfig& c) { return std::string(to_string(c.attention_form)); },
            [](DistillConfig& c, const std::string& v) { c.attention_form = parse_attention_form(v); }},
      GK_DOUBLE("gate_tau", gate_tau),
      GK_DOUBLE("sigmoid_slope", sigmoid_slope),
      GK_BOOL("gate_ties_open", gate_ties_open),
      GK_BOOL("force_confidence_one", force_confidence_one),
      GK_BOOL("hidden_gate_always_open", hidden_gate_always_open),
      GK_BOOL("attention_gate_always_open", attention_gate_always_open),
      GK_DOUBLE("learning_rate", learning_rate),
      GK_DOUBLE("weight_decay", weight_decay),
      GK_DOUBLE("warmup_fraction", warmup_fraction),
      GK_INT("batch_size", batch_size, int),
      GK_INT("grad_accum_steps", grad_accum_steps, int),
      GK_INT("max_epochs", max_epochs, int),
      GK_INT("patience", patience, int),
      Field{"seeds",
            [](const DistillConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.seeds.size(); ++i) s += (i ? "," : "") + std::to_string(c.seeds[i]);
              return s;
            },
            [](DistillConfig& c, const std::string& v) {
              c.seeds.clear();
              std::istringstream is(v);
              for (std::string tok; std::getline(is, tok, ',');)
                c.seeds.push_back(parse_int<std::uint64_t>("seeds", trim(tok)));
            }},
      GK_INT("precision", precision, int),
      Field{"task", [](const DistillConfig& c) { return std::string(to_string(c.task.task)); },
            [](DistillConfig& c, const std::string& v) { c.task.task = parse_task(v); }},
      GK_INT("num_words", task.num_words, int),
      GK_INT("num_agents", task.num_agents, int),
      GK_INT("num_swaps", task.num_swaps, int),
      GK_INT("train_size", train_size, std::size_t),
      GK_INT("val_size", val_size, std::size_t),
      GK_INT("test_size", test_size, std::size_t),
      GK_INT("data_seed", data_seed, std::uint64_t),
      GK_STRING("data_dir", data_dir),
      GK_DOUBLE("noise_rho", noise.error_rate),
      GK_DOUBLE("noise_kappa", noise.calibration),
      GK_DOUBLE("peak_prob", noise.peak_prob),
      GK_INT("teacher_seed", teacher_seed, std::uint64_t),
      GK_INT("teacher_layers", teacher_layers, int),
      GK_INT("teacher_dim", teacher_dim, int),
      GK_INT("teacher_heads", teacher_heads, int),
      GK_INT("student_layers", student_layers, int),
      GK_INT("student_dim", student_dim, int),
      GK_INT("student_heads", student_heads, int),
      GK_INT("max_seq_len", max_seq_len, int),
      GK_BOOL("identity_projection", identity_projection),
      GK_BOOL("subsample_teacher_heads", subsample_teacher_heads),
      Field{"hidden_norm", [](const DistillConfig& c) { return std::string(to_string(c.hidden_norm)); },
            [](DistillConfig& c, const std::string& v) { c.hidden_norm = parse_hidden_norm(v); }},
      GK_STRING("teacher_checkpoint", teacher_checkpoint),
      GK_INT("teacher_train_size", teacher_train_size, std::size_t),
      GK_INT("teacher_epochs", teacher_epochs, int),
      GK_DOUBLE("teacher_lr", teacher_lr),
      GK_INT("teacher_batch_size", teacher_batch_size, int),
      GK_INT("teacher_init_seed", teacher_init_seed, std::uint64_t),
  };
  return kFields;
}

#undef GK_DOUBLE
#undef GK_INT
#undef GK_BOOL
#undef GK_STRING

}  // namespace

std::string_view to_string(HiddenNorm n) { return n == HiddenNorm::unit ? "unit" : "raw"; }

HiddenNorm parse_hidden_norm(std::string_view s) {
  if (s == "unit") return HiddenNorm::unit;
  if (s == "raw") return HiddenNorm::raw;
  throw InvalidInput("unknown hidden_norm: " + std::string(s));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

std::vector<std::pair<std::string, std::string>> DistillConfig::to_kv() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

void DistillConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(*this, value);
      return;
    }
  }
  throw InvalidInput("config: unknown key: " + key);
}

void DistillConfig::validate() const {
  for (double l : {lambdas.soft, lambdas.hidden, lambdas.attention})
    require(l >= 0.0 && std::isfinite(l), "config: lambdas must be finite and non-negative");
  require(learning_rate > 0.0, "config: learning_rate must be positive");
  require(weight_decay >= 0.0, "config: weight_decay must be non-negative");
  require(warmup_fraction >= 0.0 && warmup_fraction < 1.0, "config: warmup_fraction must be in [0,1)");
  require(batch_size >= 1 && grad_accum_steps >= 1, "config: batch_size and grad_accum_steps must be positive");
  require(batch_size % grad_accum_steps == 0, "config: batch_size must be divisible by grad_accum_steps");
  require(max_epochs >= 1 && patience >= 0, "config: max_epochs >= 1 and patience >= 0 required");
  require(!seeds.empty(), "config: at least one seed required");
  require(precision == 32 || precision == 64, "config: precision must be 32 or 64");
  require(student_layers <= teacher_layers, "config: student deeper than teacher");
  require(teacher_dim % teacher_heads == 0 && student_dim % student_heads == 0,
          "config: hidden dims must be divisible by head counts");
  require(teacher_epochs >= 0 && teacher_batch_size >= 1 && teacher_lr > 0.0, "config: bad teacher training knobs");
  require(train_size >= 1 && val_size >= 1 && test_size >= 1, "config: split sizes must be positive");
}

std::size_t DistillConfig::micro_batch_size() const {
  return static_cast<std::size_t>(batch_size / grad_accum_steps);
}

std::string DistillConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_kv()) out += k + " = " + v + "\n";
  return out;
}

DistillConfig parse_config_text(const std::string& text) {
  DistillConfig cfg;
  std::istringstream is(text);
  int lineno = 0;
  for (std::string line; std::getline(is, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "config: line " + std::to_string(lineno) + " is not key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

DistillConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void save_config(const DistillConfig& cfg, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "config: cannot write " + path.string());
  out << cfg.to_text();
}

void apply_overrides(DistillConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    require(eq != std::string::npos, "override is not key=value: " + o);
    cfg.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

std::vector<std::string> config_diff(const DistillConfig& a, const DistillConfig& b) {
  std::vector<std::string> out;
  const auto ka = a.to_kv();
  const auto kb = b.to_kv();
  for (std::size_t i = 0; i < ka.size(); ++i)
    if (ka[i].second != kb[i].second) out.push_back(ka[i].first);
  return out;
}

}  // namespace gatekd
