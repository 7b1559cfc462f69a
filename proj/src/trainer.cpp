// SPDX-License-Identifier: Apache-2.0
#include "gatekd/trainer.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace gatekd {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

template <typename T>
Mat<T> unit_rows(const Mat<T>& h) {
  // Same arithmetic as layer_norm with gain 1/sqrt(d) and no bias.
  const T d = static_cast<T>(h.cols());
  Mat<T> out(h.rows(), h.cols());
  for (Eigen::Index r = 0; r < h.rows(); ++r) {
    const T mean = h.row(r).sum() / d;
    const auto centered = (h.row(r).array() - mean).matrix();
    const T var = centered.squaredNorm() / d;
    out.row(r) = centered / (std::sqrt(var + T(1e-5)) * std::sqrt(d));
  }
  return out;
}

EncodedExample encode_example(const ReasoningExample& ex, const CharVocab& vocab) {
  return EncodedExample{vocab.encode(ex.input_text), vocab.decoder_input(ex.target_text),
                        vocab.decoder_target(ex.target_text)};
}

template <typename T>
TeacherCache<T> build_teacher_cache(const FrozenModel<T>& teacher, std::span<const ReasoningExample> train,
                                    const NoisyTeacherSpec& noise, std::uint64_t teacher_seed,
                                    const CharVocab& vocab) {
  TeacherCache<T> cache;
  cache.teacher_checksum = teacher.checksum();
  cache.teacher_dim = teacher.config().hidden_dim;
  cache.signals.reserve(train.size());
  const int v = vocab.size();
  for (const auto& ex : train) {
    std::mt19937_64 rng(splitmix64(teacher_seed) ^ splitmix64(static_cast<std::uint64_t>(ex.seed_id)));
    TeacherEmission em = noisy_teacher_emit(ex, noise, vocab, rng);
    ForwardTrace<T> tr = teacher.trace(vocab.encode(em.emitted_input), vocab.decoder_input(em.emitted_target));

    TeacherSignals<T> sig;
    sig.corrupted = em.corrupted;
    sig.emitted_target = em.emitted_target;
    sig.confidence_normalized =
        confidence_profile(em.distributions, v, ConfidenceFormula::normalized_entropy).seq_conf;
    sig.confidence_exp = confidence_profile(em.distributions, v, ConfidenceFormula::exp_neg_entropy).seq_conf;
    const auto steps = static_cast<Eigen::Index>(em.steps());
    sig.soft = Eigen::Map<const Mat<double>>(em.distributions.data(), steps, v).template cast<T>();
    sig.hidden = std::move(tr.hidden_states);
    sig.attention = std::move(tr.attention_maps);
    cache.signals.push_back(std::move(sig));
  }
  return cache;
}

template <typename T>
Student<T>::Student(const ModelConfig& cfg, int teacher_dim, bool identity_projection, std::uint64_t seed)
    : model(cfg, seed) {
  if (teacher_dim <= 0) return;
  std::mt19937_64 rng(splitmix64(seed + 1));
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(teacher_dim)));
  for (int k = 0; k < cfg.num_layers; ++k) {
    Param<T> p;
    p.name = "projection." + std::to_string(k);
    if (identity_projection) {
      require(teacher_dim == cfg.hidden_dim, "identity projection requires equal hidden dims");
    } else {
      p.value.resize(teacher_dim, cfg.hidden_dim);
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(dist(rng));
    }
    p.zero_grad();
    projections.push_back(std::move(p));
  }
}

template <typename T>
std::vector<Param<T>*> Student<T>::trainable() {
  std::vector<Param<T>*> out;
  for (auto& p : model.params()) out.push_back(&p);
  for (auto& p : projections)
    if (p.value.size() > 0) out.push_back(&p);
  return out;
}

template <typename T>
void Student<T>::zero_grad() {
  model.zero_grad();
  for (auto& p : projections) p.zero_grad();
}

template <typename T>
std::uint64_t Student<T>::checksum() const {
  std::uint64_t h = model.checksum();
  for (const auto& p : projections)
    h = fnv1a(std::as_bytes(std::span(p.value.data(), static_cast<std::size_t>(p.value.size()))), h);
  return h;
}

template <typename T>
StepOutcome accumulate_gradients(std::span<const StepItem<T>> batch, Student<T>& student,
                                 const DistillConfig& cfg, const std::optional<LayerMap>& map) {
  require(!batch.empty(), "distill step: empty batch");
  const std::size_t n = batch.size();
  StepOutcome out;
  out.confidences.assign(n, 0.0);
  out.gates.assign(n, 0.0);
  out.soft_weights.assign(n, 0.0);

  const bool has_teacher = std::any_of(batch.begin(), batch.end(), [](const auto& it) { return it.teacher; });
  if (has_teacher) {
    for (std::size_t i = 0; i < n; ++i) {
      require(batch[i].teacher != nullptr, "distill step: mixed batch of items with and without teacher signals");
      out.confidences[i] = cfg.force_confidence_one ? 1.0 : batch[i].teacher->confidence(cfg.confidence_formula);
    }
    GateParams gp{cfg.gating_strategy, cfg.gate_tau, cfg.sigmoid_slope, cfg.gate_ties_open};
    out.gates = make_gates(out.confidences, gp).weights;
    for (std::size_t i = 0; i < n; ++i) out.soft_weights[i] = out.confidences[i] * out.gates[i];
    require(map.has_value(), "distill step: layer map required with teacher signals");
  }

  student.zero_grad();
  std::vector<Mat<T>> proj_values;
  for (const auto& p : student.projections) proj_values.push_back(p.value);

  const T inv_n = T(1) / static_cast<T>(n);
  const std::size_t micro = std::max<std::size_t>(1, cfg.micro_batch_size());
  const AttentionLossOptions att_opts{cfg.attention_form, cfg.subsample_teacher_heads, 1e-4};
  double task_sum = 0, soft_sum = 0, hid_sum = 0, att_sum = 0;
  std::vector<std::size_t> bad_ids;

  for (std::size_t start = 0; start < n; start += micro) {
    const std::size_t stop = std::min(n, start + micro);
    for (std::size_t i = start; i < stop; ++i) {
      const StepItem<T>& item = batch[i];
      const EncodedExample& ex = *item.example;
      Tape<T> tape;
      TraceVars tv = student.model.forward(tape, ex.input, ex.decoder_input);
      Var task = ad::cross_entropy(tape, tv.logits, ex.decoder_target);
      std::vector<Var> terms{task};
      std::vector<T> weights{T(1)};
      double soft_v = 0, hid_v = 0, att_v = 0;

      if (item.teacher != nullptr) {
        const TeacherSignals<T>& sig = *item.teacher;
        const T w_soft = static_cast<T>(out.soft_weights[i]);
        if (w_soft > T(0)) {
          auto res = gated_soft_loss<T>(sig.soft, tape.value(tv.logits), w_soft, cfg.soft_form);
          soft_v = static_cast<double>(res.value);
          Mat<T> v(1, 1);
          v(0, 0) = res.value;
          Var logits = tv.logits;
          terms.push_back(tape.record(std::move(v), {logits},
                                      [logits, g = std::move(res.grad_logits)](Tape<T>& tp, const Mat<T>& up) {
                                        tp.grad(logits) += up(0, 0) * g;
                                      }));
          weights.push_back(static_cast<T>(cfg.lambdas.soft));
        }

        const T h_gate = cfg.hidden_gate_always_open ? T(1) : static_cast<T>(out.gates[i]);
        if (h_gate > T(0)) {
          std::vector<Var> hidden = tv.hidden;
          std::vector<Mat<T>> teacher_hidden;
          if (cfg.hidden_norm == HiddenNorm::unit) {
            const int d = student.model.config().hidden_dim;
            const Var gain = tape.constant(Mat<T>::Constant(1, d, T(1) / std::sqrt(static_cast<T>(d))));
            const Var bias = tape.constant(Mat<T>::Zero(1, d));
            for (Var& h : hidden) h = ad::layer_norm(tape, h, gain, bias);
            for (const auto& h : sig.hidden) teacher_hidden.push_back(unit_rows(h));
          }
          std::vector<Mat<T>> hs;
          for (Var h : hidden) hs.push_back(tape.value(h));
          const std::vector<T> gates(hidden.size(), h_gate);
          auto res = gated_hidden_loss<T>(hs, teacher_hidden.empty() ? sig.hidden : teacher_hidden, proj_values,
                                          gates, *map);
          hid_v = static_cast<double>(res.value);
          std::vector<Var> inputs = hidden;
          std::vector<Var> proj_vars;
          for (auto& p : student.projections) {
            proj_vars.push_back(p.value.size() > 0 ? tape.leaf(p) : Var{});
            if (p.value.size() > 0) inputs.push_back(proj_vars.back());
          }
          Mat<T> v(1, 1);
          v(0, 0) = res.value;
          terms.push_back(tape.record(
              std::move(v), inputs,
              [hidden, proj_vars, r = std::move(res)](Tape<T>& tp, const Mat<T>& up) {
                const T g = up(0, 0);
                for (std::size_t k = 0; k < hidden.size(); ++k) {
                  tp.grad(hidden[k]) += g * r.grad_student[k];
                  if (proj_vars[k].valid()) tp.grad(proj_vars[k]) += g * r.grad_projection[k];
                }
              }));
          weights.push_back(static_cast<T>(cfg.lambdas.hidden));
        }

        const T a_gate = cfg.attention_gate_always_open ? T(1) : static_cast<T>(out.gates[i]);
        if (a_gate > T(0)) {
          std::vector<std::vector<Mat<T>>> as;
          std::vector<Var> inputs;
          for (const auto& layer : tv.attention) {
            std::vector<Mat<T>> heads;
            for (Var a : layer) {
              heads.push_back(tape.value(a));
              inputs.push_back(a);
            }
            as.push_back(std::move(heads));
          }
          const std::vector<T> gates(tv.attention.size(), a_gate);
          auto res = gated_attention_loss<T>(as, sig.attention, gates, *map, att_opts);
          att_v = static_cast<double>(res.value);
          Mat<T> v(1, 1);
          v(0, 0) = res.value;
          terms.push_back(tape.record(std::move(v), inputs,
                                      [attn = tv.attention, r = std::move(res)](Tape<T>& tp, const Mat<T>& up) {
                                        const T g = up(0, 0);
                                        for (std::size_t k = 0; k < attn.size(); ++k)
                                          for (std::size_t h = 0; h < attn[k].size(); ++h)
                                            tp.grad(attn[k][h]) += g * r.grad_student[k][h];
                                      }));
          weights.push_back(static_cast<T>(cfg.lambdas.attention));
        }
      }

      Var total = ad::weighted_sum(tape, terms, weights);
      const double task_v = static_cast<double>(tape.value(task)(0, 0));
      if (!std::isfinite(static_cast<double>(tape.value(total)(0, 0)))) {
        bad_ids.push_back(item.example_id);
        continue;
      }
      tape.backward(total, inv_n);
      task_sum += task_v;
      soft_sum += soft_v;
      hid_sum += hid_v;
      att_sum += att_v;
    }
  }

  if (!bad_ids.empty()) {
    std::string ids;
    for (auto id : bad_ids) ids += (ids.empty() ? "" : ",") + std::to_string(id);
    throw NonFiniteLoss("non-finite loss for example ids [" + ids + "]");
  }

  const double dn = static_cast<double>(n);
  const double mean_conf = std::accumulate(out.confidences.begin(), out.confidences.end(), 0.0) / dn;
  const double open = has_teacher ? std::accumulate(out.gates.begin(), out.gates.end(), 0.0) / dn : 0.0;
  out.breakdown = combined_loss(task_sum / dn, soft_sum / dn, hid_sum / dn, att_sum / dn, cfg.lambdas, open,
                                has_teacher ? mean_conf : 0.0);
  return out;
}

template <typename T>
StepOutcome distill_step(std::span<const StepItem<T>> batch, Student<T>& student, AdamW<T>& opt, double lr,
                         const DistillConfig& cfg, const std::optional<LayerMap>& map) {
  StepOutcome out = accumulate_gradients(batch, student, cfg, map);
  opt.step(lr);
  return out;
}

double exact_match(std::span<const std::string> predictions, std::span<const std::string> targets) {
  require(predictions.size() == targets.size(), "exact_match: length mismatch");
  if (predictions.empty()) return 0.0;
  auto strip = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
  };
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (strip(predictions[i]) == strip(targets[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

template <typename T>
double evaluate_exact_match(const Seq2SeqModel<T>& model, std::span<const ReasoningExample> examples,
                            const CharVocab& vocab) {
  std::size_t longest = 0;
  for (const auto& ex : examples) longest = std::max(longest, ex.target_text.size());
  std::vector<std::string> preds;
  std::vector<std::string> golds;
  for (const auto& ex : examples) {
    preds.push_back(vocab.decode(model.greedy_decode(vocab.encode(ex.input_text), static_cast<int>(longest) + 2)));
    golds.push_back(ex.target_text);
  }
  return exact_match(preds, golds);
}

ModelConfig teacher_model_config(const DistillConfig& cfg, const CharVocab& vocab) {
  return ModelConfig{vocab.size(), cfg.teacher_dim, cfg.teacher_layers, cfg.teacher_heads, cfg.max_seq_len,
                     ModelRole::teacher};
}

ModelConfig student_model_config(const DistillConfig& cfg, const CharVocab& vocab) {
  return ModelConfig{vocab.size(), cfg.student_dim, cfg.student_layers, cfg.student_heads, cfg.max_seq_len,
                     ModelRole::student};
}

namespace {

template <typename T>
struct FitResult {
  RunRecord record;
  std::optional<Student<T>> student;
};

template <typename T>
FitResult<T> fit(const DistillConfig& cfg, const ModelConfig& model_cfg, const TrainContext<T>& ctx,
                 std::uint64_t seed) {
  cfg.validate();
  require(ctx.splits != nullptr, "train: no datasets");
  validate_splits(*ctx.splits);
  const auto& train_set = ctx.splits->train;
  const bool distilling = ctx.cache != nullptr;
  if (distilling) {
    require(ctx.cache->signals.size() == train_set.size(), "train: teacher cache does not match train split");
  } else {
    require(cfg.lambdas.soft == 0 && cfg.lambdas.hidden == 0 && cfg.lambdas.attention == 0,
            "train: distillation weights are non-zero but no teacher signals were provided");
  }

  CharVocab vocab;
  std::vector<EncodedExample> encoded;
  encoded.reserve(train_set.size());
  for (const auto& ex : train_set) encoded.push_back(encode_example(ex, vocab));

  FitResult<T> res;
  RunRecord& rec = res.record;
  rec.seed = seed;
  rec.config = cfg;
  rec.teacher_checksum_before = ctx.teacher ? ctx.teacher->checksum() : 0;

  const int teacher_dim = distilling ? ctx.cache->teacher_dim : 0;
  res.student.emplace(model_cfg, teacher_dim, cfg.identity_projection, seed);
  Student<T>& student = *res.student;
  rec.student_parameters = student.model.parameter_count();
  std::optional<LayerMap> map;
  if (distilling) map = uniform_layer_map(model_cfg.num_layers, cfg.teacher_layers);

  AdamW<T> opt(student.trainable(), AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  const std::size_t b = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (train_set.size() + b - 1) / b;
  const LinearWarmupSchedule schedule{cfg.learning_rate, steps_per_epoch * static_cast<std::size_t>(cfg.max_epochs),
                                      cfg.warmup_fraction};

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(splitmix64(seed ^ 0x5eedULL));

  double best_acc = -1.0;
  int since_best = 0;
  std::vector<Mat<T>> best_params;
  auto snapshot = [&] {
    best_params.clear();
    for (const auto& p : student.model.params()) best_params.push_back(p.value);
  };

  std::size_t step = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);

    EpochGateStats gs;
    gs.epoch = epoch;
    double clean_open = 0, clean_conf = 0, bad_open = 0, bad_conf = 0;
    for (std::size_t start = 0; start < order.size(); start += b) {
      const std::size_t stop = std::min(order.size(), start + b);
      std::vector<StepItem<T>> batch;
      for (std::size_t j = start; j < stop; ++j) {
        const std::size_t id = order[j];
        batch.push_back({id, &encoded[id], distilling ? &ctx.cache->signals[id] : nullptr});
      }
      StepOutcome so = distill_step<T>(batch, student, opt, schedule.at(step), cfg, map);
      ++step;
      rec.steps.push_back(so.breakdown);
      rec.step_epoch.push_back(epoch);
      if (distilling) {
        for (std::size_t j = 0; j < batch.size(); ++j) {
          if (batch[j].teacher->corrupted) {
            ++gs.corrupted_count;
            bad_open += so.gates[j];
            bad_conf += so.confidences[j];
          } else {
            ++gs.clean_count;
            clean_open += so.gates[j];
            clean_conf += so.confidences[j];
          }
        }
      }
    }
    if (gs.clean_count > 0) {
      gs.clean_open_rate = clean_open / static_cast<double>(gs.clean_count);
      gs.clean_mean_confidence = clean_conf / static_cast<double>(gs.clean_count);
    }
    if (gs.corrupted_count > 0) {
      gs.corrupted_open_rate = bad_open / static_cast<double>(gs.corrupted_count);
      gs.corrupted_mean_confidence = bad_conf / static_cast<double>(gs.corrupted_count);
    }
    if (distilling) rec.gate_stats.push_back(gs);

    const double acc = evaluate_exact_match(student.model, ctx.splits->validation, vocab);
    rec.val_accuracy.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      rec.best_epoch = epoch;
      since_best = 0;
      snapshot();
    } else {
      ++since_best;
    }
    if (since_best >= cfg.patience) {
      rec.early_stopped = epoch < cfg.max_epochs;
      break;
    }
  }

  for (std::size_t i = 0; i < best_params.size(); ++i) student.model.params()[i].value = best_params[i];
  rec.test_accuracy = evaluate_exact_match(student.model, ctx.splits->test, vocab);
  rec.student_checksum = student.checksum();
  rec.teacher_checksum_after = ctx.teacher ? ctx.teacher->checksum() : 0;
  return res;
}

}  // namespace

template <typename T>
RunRecord train_run(const DistillConfig& cfg, const TrainContext<T>& ctx, std::uint64_t seed) {
  CharVocab vocab;
  return fit<T>(cfg, student_model_config(cfg, vocab), ctx, seed).record;
}

template <typename T>
std::vector<RunRecord> train(const DistillConfig& cfg, const TrainContext<T>& ctx) {
  std::vector<RunRecord> out;
  for (auto seed : cfg.seeds) out.push_back(train_run<T>(cfg, ctx, seed));
  return out;
}

DatasetSplits teacher_training_splits(const DistillConfig& cfg, const DatasetSplits& splits) {
  DatasetSplits pool = splits;
  if (cfg.teacher_train_size <= pool.train.size()) return pool;
  std::set<std::string> seen;
  for (const auto* part : {&splits.train, &splits.validation, &splits.test})
    for (const auto& ex : *part) seen.insert(ex.input_text);
  const std::size_t want = cfg.teacher_train_size - pool.train.size();
  const std::size_t max_attempts = 50 * want + 1000;
  std::size_t added = 0;
  for (std::uint64_t i = 0; added < want; ++i) {
    require(i < max_attempts, "dataset: task space too small for teacher_train_size");
    const std::uint64_t ex_seed = splitmix64(splitmix64(cfg.data_seed) ^ splitmix64(~i)) & ((1ULL << 53) - 1);
    ReasoningExample ex = generate_example(cfg.task, ex_seed);
    if (!seen.insert(ex.input_text).second) continue;
    pool.train.push_back(std::move(ex));
    ++added;
  }
  return pool;
}

template <typename T>
TeacherTraining<T> train_teacher(const DistillConfig& cfg, const DatasetSplits& student_splits) {
  const DatasetSplits splits = teacher_training_splits(cfg, student_splits);
  DistillConfig tc = cfg;
  tc.lambdas = Lambdas{0.0, 0.0, 0.0};
  tc.learning_rate = cfg.teacher_lr;
  tc.batch_size = cfg.teacher_batch_size;
  tc.grad_accum_steps = 1;
  tc.max_epochs = std::max(1, cfg.teacher_epochs);
  tc.patience = tc.max_epochs;
  CharVocab vocab;
  TrainContext<T> ctx{&splits, nullptr, nullptr};
  FitResult<T> fr = fit<T>(tc, teacher_model_config(cfg, vocab), ctx, cfg.teacher_init_seed);
  TeacherTraining<T> out;
  out.validation_accuracy = fr.record.val_accuracy.empty()
                                ? 0.0
                                : *std::max_element(fr.record.val_accuracy.begin(), fr.record.val_accuracy.end());
  out.test_accuracy = fr.record.test_accuracy;
  out.teacher.emplace(freeze(std::move(fr.student->model)));
  return out;
}

template <typename T>
FrozenModel<T> obtain_teacher(const DistillConfig& cfg, const DatasetSplits& splits) {
  CharVocab vocab;
  const ModelConfig want = teacher_model_config(cfg, vocab);
  if (!cfg.teacher_checkpoint.empty() && std::filesystem::exists(std::filesystem::path(cfg.teacher_checkpoint) / "manifest.json")) {
    Seq2SeqModel<T> m = load_checkpoint<T>(cfg.teacher_checkpoint);
    const ModelConfig& got = m.config();
    require(got.hidden_dim == want.hidden_dim && got.num_layers == want.num_layers &&
                got.num_heads == want.num_heads && got.vocab_size == want.vocab_size,
            "teacher checkpoint does not match the configured teacher architecture");
    return freeze(std::move(m));
  }
  TeacherTraining<T> tt = train_teacher<T>(cfg, splits);
  if (!cfg.teacher_checkpoint.empty()) save_checkpoint(tt.teacher->model(), cfg.teacher_checkpoint);
  return std::move(*tt.teacher);
}

DatasetSplits load_or_generate_splits(const DistillConfig& cfg) {
  DatasetSplits s = cfg.data_dir.empty()
                        ? generate_splits(cfg.task, cfg.train_size, cfg.val_size, cfg.test_size, cfg.data_seed)
                        : read_splits(cfg.data_dir);
  validate_splits(s);
  return s;
}

void write_run_record(const RunRecord& rec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_config(rec.config, dir / "config.cfg");
  {
    std::ofstream m(dir / "metrics.csv", std::ios::binary);
    m << "step,task_loss,soft_loss,hidden_loss,attention_loss,total,gate_open_fraction,mean_confidence\n";
    for (std::size_t i = 0; i < rec.steps.size(); ++i) {
      const auto& s = rec.steps[i];
      m << (i + 1) << ',' << fmt(s.task_loss) << ',' << fmt(s.soft_loss) << ',' << fmt(s.hidden_loss) << ','
        << fmt(s.attention_loss) << ',' << fmt(s.total) << ',' << fmt(s.gate_open_fraction) << ','
        << fmt(s.mean_confidence) << '\n';
    }
  }
  {
    std::ofstream g(dir / "gates.csv", std::ios::binary);
    g << "epoch,split,count,open_rate,mean_confidence\n";
    for (const auto& e : rec.gate_stats) {
      g << e.epoch << ",clean," << e.clean_count << ',';
      if (e.clean_count > 0) g << fmt(e.clean_open_rate) << ',' << fmt(e.clean_mean_confidence);
      else g << ',';
      g << '\n' << e.epoch << ",corrupted," << e.corrupted_count << ',';
      if (e.corrupted_count > 0) g << fmt(e.corrupted_open_rate) << ',' << fmt(e.corrupted_mean_confidence);
      else g << ',';
      g << '\n';
    }
  }
  nlohmann::ordered_json j;
  j["seed"] = rec.seed;
  nlohmann::ordered_json cfg;
  for (const auto& [k, v] : rec.config.to_kv()) cfg[k] = v;
  j["config"] = cfg;
  j["val_accuracy"] = rec.val_accuracy;
  j["best_epoch"] = rec.best_epoch;
  j["test_accuracy"] = rec.test_accuracy;
  j["early_stopped"] = rec.early_stopped;
  j["steps"] = rec.steps.size();
  j["student_parameters"] = rec.student_parameters;
  j["student_checksum"] = hex64(rec.student_checksum);
  j["teacher_checksum_before"] = hex64(rec.teacher_checksum_before);
  j["teacher_checksum_after"] = hex64(rec.teacher_checksum_after);
  std::ofstream(dir / "run.json", std::ios::binary) << j.dump(2) << '\n';
}

#define GATEKD_INSTANTIATE(T)                                                                              \
  template TeacherCache<T> build_teacher_cache<T>(const FrozenModel<T>&, std::span<const ReasoningExample>, \
                                                  const NoisyTeacherSpec&, std::uint64_t, const CharVocab&); \
  template struct Student<T>;                                                                              \
  template Mat<T> unit_rows<T>(const Mat<T>&);                                                             \
  template StepOutcome accumulate_gradients<T>(std::span<const StepItem<T>>, Student<T>&,                  \
                                               const DistillConfig&, const std::optional<LayerMap>&);       \
  template StepOutcome distill_step<T>(std::span<const StepItem<T>>, Student<T>&, AdamW<T>&, double,       \
                                       const DistillConfig&, const std::optional<LayerMap>&);               \
  template double evaluate_exact_match<T>(const Seq2SeqModel<T>&, std::span<const ReasoningExample>,       \
                                          const CharVocab&);                                               \
  template RunRecord train_run<T>(const DistillConfig&, const TrainContext<T>&, std::uint64_t);            \
  template std::vector<RunRecord> train<T>(const DistillConfig&, const TrainContext<T>&);                  \
  template TeacherTraining<T> train_teacher<T>(const DistillConfig&, const DatasetSplits&);                \
  template FrozenModel<T> obtain_teacher<T>(const DistillConfig&, const DatasetSplits&);

GATEKD_INSTANTIATE(float)
GATEKD_INSTANTIATE(double)

#undef GATEKD_INSTANTIATE

}  // namespace gatekd
