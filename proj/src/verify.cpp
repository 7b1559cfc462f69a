// SPDX-License-Identifier: Apache-2.0
#include "gatekd/verify.hpp"

#include "gatekd/trainer.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

namespace gatekd {

namespace {

using Rng = std::mt19937_64;

double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::vector<double> random_distribution(Rng& rng, int v) {
  std::vector<double> p(v);
  double s = 0;
  for (auto& x : p) {
    x = -std::log(unit(rng) + 1e-300) * (unit(rng) < 0.2 ? 1e-6 : 1.0);
    s += x;
  }
  for (auto& x : p) x /= s;
  return p;
}

Mat<double> random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * (2 * unit(rng) - 1);
  return m;
}

Mat<double> random_rows_simplex(Rng& rng, int r, int c, bool causal = false, double smooth = 0.0) {
  Mat<double> m = Mat<double>::Zero(r, c);
  for (int i = 0; i < r; ++i) {
    const int w = causal ? std::min(c, i + 1) : c;
    auto p = random_distribution(rng, w);
    for (int j = 0; j < w; ++j) m(i, j) = (1 - smooth) * p[j] + smooth / w;
  }
  return m;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-12, std::abs(a), std::abs(b)}); }

/// Largest relative error between analytic `grad` and central differences of
/// f with respect to every entry of x.
double fd_check(Mat<double>& x, const Mat<double>& grad, const std::function<double()>& f, double h = 1e-6) {
  double worst = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f();
    x.data()[i] = keep - h;
    const double down = f();
    x.data()[i] = keep;
    const double num = (up - down) / (2 * h);
    const double ana = grad.data()[i];
    const double err = std::abs(num - ana) / std::max(1e-6, std::abs(num) + std::abs(ana));
    worst = std::max(worst, err);
  }
  return worst;
}

CheckResult check(std::string name, const std::function<std::string()>& body) {
  try {
    std::string failure = body();
    return {std::move(name), failure.empty(), failure};
  } catch (const std::exception& e) {
    return {std::move(name), false, std::string("exception: ") + e.what()};
  }
}

std::string entropy_reference() {
  Rng rng(11);
  double worst = 0;
  for (int n = 0; n < 300; ++n) {
    const int v = 2 + static_cast<int>(rng() % 63);
    auto p = random_distribution(rng, v);
    long double h = 0;
    for (double x : p) h -= static_cast<long double>(x) * std::log(std::max(static_cast<long double>(x), 1e-12L));
    worst = std::max(worst, rel_err(shannon_entropy(p), static_cast<double>(h)));
    worst = std::max(worst, rel_err(confidence_exp(p), static_cast<double>(std::exp(-h))));
    worst = std::max(worst, rel_err(confidence_normalized(p, v),
                                    static_cast<double>(1.0L - h / std::log(static_cast<long double>(v)))));
  }
  return worst <= 1e-10 ? "" : "relative error " + std::to_string(worst);
}

std::string batch_relative_gates() {
  Rng rng(12);
  for (int n = 0; n < 300; ++n) {
    const std::size_t b = 1 + rng() % 40;
    std::vector<double> c(b);
    for (auto& x : c) x = (rng() % 4 == 0) ? 0.5 : unit(rng);
    const auto g = make_gates(c, GateParams{GateStrategy::batch_relative}).weights;
    long double mean = 0;
    for (double x : c) mean += x;
    mean /= static_cast<long double>(b);
    for (std::size_t i = 0; i < b; ++i) {
      const bool open = static_cast<long double>(c[i]) > mean;
      if ((g[i] == 1.0) != open || (g[i] != 0.0 && g[i] != 1.0)) return "batch " + std::to_string(n) + " mismatch";
    }
  }
  const auto none = make_gates(std::vector<double>{0.0, 0.3, 1.0}, GateParams{GateStrategy::none}).weights;
  for (double g : none)
    if (g != 1.0) return "strategy none did not open every gate";
  return "";
}

std::string zero_confidence() {
  Rng rng(13);
  Mat<double> probs = random_rows_simplex(rng, 5, 9);
  Mat<double> logits = random_mat(rng, 5, 9, 3.0);
  for (auto form : {SoftForm::kl, SoftForm::cross_entropy}) {
    auto r = gated_soft_loss<double>(probs, logits, 0.0, form);
    if (r.value != 0.0 || r.grad_logits.cwiseAbs().maxCoeff() > 1e-8) return "soft loss not zero at confidence 0";
  }
  LayerMap map = uniform_layer_map(2, 4);
  std::vector<Mat<double>> hs{random_mat(rng, 5, 6), random_mat(rng, 5, 6)};
  std::vector<Mat<double>> ht(4, random_mat(rng, 5, 10));
  std::vector<Mat<double>> w{random_mat(rng, 10, 6), random_mat(rng, 10, 6)};
  std::vector<double> zero{0.0, 0.0};
  auto hr = gated_hidden_loss<double>(hs, ht, w, zero, map);
  if (hr.value != 0.0 || hr.grad_student[0].cwiseAbs().maxCoeff() > 1e-8) return "hidden loss not zero at gate 0";
  return "";
}

std::string soft_gradients() {
  Rng rng(14);
  for (auto form : {SoftForm::kl, SoftForm::cross_entropy}) {
    Mat<double> probs = random_rows_simplex(rng, 4, 7);
    Mat<double> logits = random_mat(rng, 4, 7, 2.0);
    const double c = 0.7;
    auto r = gated_soft_loss<double>(probs, logits, c, form);
    double e = fd_check(logits, r.grad_logits, [&] { return gated_soft_loss<double>(probs, logits, c, form).value; });
    if (e > 1e-4) return std::string(to_string(form)) + " relative error " + std::to_string(e);
  }
  return "";
}

std::string hidden_gradients() {
  Rng rng(15);
  LayerMap map = uniform_layer_map(2, 3);
  std::vector<Mat<double>> hs{random_mat(rng, 4, 5), random_mat(rng, 4, 5)};
  std::vector<Mat<double>> ht{random_mat(rng, 4, 6), random_mat(rng, 4, 6), random_mat(rng, 4, 6)};
  std::vector<Mat<double>> w{random_mat(rng, 6, 5), random_mat(rng, 6, 5)};
  std::vector<double> g{0.8, 1.0};
  auto f = [&] { return gated_hidden_loss<double>(hs, ht, w, g, map).value; };
  auto r = gated_hidden_loss<double>(hs, ht, w, g, map);
  double e = 0;
  for (int k = 0; k < 2; ++k) {
    e = std::max(e, fd_check(hs[k], r.grad_student[k], f));
    e = std::max(e, fd_check(w[k], r.grad_projection[k], f));
  }
  return e <= 1e-4 ? "" : "relative error " + std::to_string(e);
}

std::string attention_gradients() {
  Rng rng(16);
  LayerMap map = uniform_layer_map(1, 2);
  for (auto form : {AttentionForm::mse, AttentionForm::kl}) {
    // Smoothed rows keep every entry well away from zero under perturbation.
    std::vector<std::vector<Mat<double>>> as{
        {random_rows_simplex(rng, 4, 4, true, 0.3), random_rows_simplex(rng, 4, 4, true, 0.3)}};
    std::vector<std::vector<Mat<double>>> at(2);
    for (auto& l : at)
      for (int h = 0; h < 4; ++h) l.push_back(random_rows_simplex(rng, 4, 4, true, 0.3));
    std::vector<double> g{0.9};
    AttentionLossOptions opts{form, true, 1e-6};
    auto f = [&] { return gated_attention_loss<double>(as, at, g, map, opts).value; };
    auto r = gated_attention_loss<double>(as, at, g, map, opts);
    double e = 0;
    for (int h = 0; h < 2; ++h) {
      // Perturb only causal entries; masked entries are structural zeros.
      Mat<double>& a = as[0][h];
      for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j <= i; ++j) {
          const double keep = a(i, j), step = 1e-7;
          a(i, j) = keep + step;
          const double up = f();
          a(i, j) = keep - step;
          const double down = f();
          a(i, j) = keep;
          const double num = (up - down) / (2 * step);
          const double ana = r.grad_student[0][h](i, j);
          e = std::max(e, std::abs(num - ana) / std::max(1e-6, std::abs(num) + std::abs(ana)));
        }
    }
    if (e > 1e-4) return std::string(to_string(form)) + " relative error " + std::to_string(e);
  }
  return "";
}

std::string layer_maps() {
  for (int lt = 1; lt <= 16; ++lt)
    for (int ls = 1; ls <= lt; ++ls) {
      LayerMap m = uniform_layer_map(ls, lt);
      for (int k = 0; k < ls; ++k) {
        const int t = m.teacher_of[k];
        if (t < 0 || t >= lt) return "out of range";
        if (k > 0 && t <= m.teacher_of[k - 1]) return "not strictly increasing";
      }
      if (m.teacher_of.back() != lt - 1) return "last student layer not aligned to last teacher layer";
    }
  return "";
}

std::string generators() {
  Rng rng(17);
  for (int n = 0; n < 500; ++n) {
    auto ex = gen_last_letter(1 + static_cast<int>(rng() % 5), rng());
    std::istringstream words(ex.input_text);
    std::string w, want;
    while (words >> w) want += w.back();
    if (ex.target_text != want) return "last_letter mismatch on '" + ex.input_text + "'";
  }
  for (int n = 0; n < 500; ++n) {
    const int agents = 2 + static_cast<int>(rng() % 4);
    auto inst = sample_shuffled_objects(agents, static_cast<int>(rng() % 6), rng());
    auto held = inst.initial_items;
    for (auto [a, b] : inst.swaps) std::swap(held[a], held[b]);
    if (make_shuffled_objects(inst).target_text != held[inst.query_agent]) return "shuffled_objects mismatch";
  }
  const std::vector<std::string> words{"Max", "Mikey", "Cynthia", "Holly"};
  if (make_last_letter(words).target_text != "xyay") return "reference example does not give xyay";
  return "";
}

DistillConfig tiny_config() {
  DistillConfig c;
  c.teacher_layers = 2;
  c.teacher_dim = 16;
  c.teacher_heads = 2;
  c.student_layers = 1;
  c.student_dim = 8;
  c.student_heads = 1;
  c.batch_size = 4;
  c.grad_accum_steps = 2;
  c.learning_rate = 1e-2;
  c.max_epochs = 2;
  c.patience = 2;
  c.train_size = 12;
  c.val_size = 4;
  c.test_size = 4;
  c.seeds = {3};
  c.precision = 64;
  return c;
}

std::string degenerate_lambdas() {
  DistillConfig cfg = tiny_config();
  cfg.lambdas = Lambdas{0.0, 0.0, 0.0};
  CharVocab vocab;
  DatasetSplits sp = generate_splits(cfg.task, cfg.train_size, cfg.val_size, cfg.test_size, 5);
  FrozenModel<double> teacher = freeze(Seq2SeqModel<double>(teacher_model_config(cfg, vocab), 1));
  auto cache = build_teacher_cache<double>(teacher, sp.train, cfg.noise, 2, vocab);
  std::vector<EncodedExample> enc;
  for (std::size_t i = 0; i < 4; ++i) enc.push_back(encode_example(sp.train[i], vocab));
  std::vector<StepItem<double>> with, without;
  for (std::size_t i = 0; i < 4; ++i) {
    with.push_back({i, &enc[i], &cache.signals[i]});
    without.push_back({i, &enc[i], nullptr});
  }
  const ModelConfig sc = student_model_config(cfg, vocab);
  Student<double> a(sc, cfg.teacher_dim, false, 4), b(sc, 0, false, 4);
  AdamW<double> oa(a.trainable(), {}), ob(b.trainable(), {});
  LayerMap map = uniform_layer_map(cfg.student_layers, cfg.teacher_layers);
  distill_step<double>(with, a, oa, 1e-2, cfg, map);
  distill_step<double>(without, b, ob, 1e-2, cfg, std::nullopt);
  double diff = 0;
  for (std::size_t i = 0; i < b.model.params().size(); ++i)
    diff = std::max(diff, (a.model.params()[i].value - b.model.params()[i].value).cwiseAbs().maxCoeff());
  return diff <= 1e-7 ? "" : "parameter difference " + std::to_string(diff);
}

std::string determinism() {
  DistillConfig cfg = tiny_config();
  CharVocab vocab;
  DatasetSplits sp = generate_splits(cfg.task, cfg.train_size, cfg.val_size, cfg.test_size, 6);
  FrozenModel<double> teacher = freeze(Seq2SeqModel<double>(teacher_model_config(cfg, vocab), 1));
  const auto before = teacher.checksum();
  auto cache = build_teacher_cache<double>(teacher, sp.train, cfg.noise, 2, vocab);
  TrainContext<double> ctx{&sp, &teacher, &cache};
  RunRecord r1 = train_run<double>(cfg, ctx, 3);
  RunRecord r2 = train_run<double>(cfg, ctx, 3);
  if (r1.student_checksum != r2.student_checksum) return "student checksums differ";
  if (r1.steps.size() != r2.steps.size()) return "step counts differ";
  for (std::size_t i = 0; i < r1.steps.size(); ++i)
    if (r1.steps[i].total != r2.steps[i].total) return "loss trajectories differ";
  if (teacher.checksum() != before || r1.teacher_checksum_after != before) return "teacher parameters changed";
  return "";
}

}  // namespace

std::vector<CheckResult> run_invariant_suite() {
  return {
      check("entropy matches long-double reference", entropy_reference),
      check("gate identities", batch_relative_gates),
      check("zero confidence gives zero loss and gradient", zero_confidence),
      check("soft loss gradient", soft_gradients),
      check("hidden loss gradient", hidden_gradients),
      check("attention loss gradient", attention_gradients),
      check("layer map", layer_maps),
      check("task generators", generators),
      check("zero lambdas equal supervised step", degenerate_lambdas),
      check("repeat runs are identical", determinism),
  };
}

}  // namespace gatekd
