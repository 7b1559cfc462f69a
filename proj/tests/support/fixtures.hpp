// Small end-to-end fixtures: a tiny config, an untrained frozen teacher, its
// cached signals, and step items over the train split.
#pragma once

#include "gatekd/trainer.hpp"

#include <cmath>
#include <memory>
#include <vector>

namespace fixture {

inline gatekd::DistillConfig tiny_config() {
  gatekd::DistillConfig c;
  c.teacher_layers = 2;
  c.teacher_dim = 16;
  c.teacher_heads = 2;
  c.student_layers = 1;
  c.student_dim = 8;
  c.student_heads = 1;
  c.batch_size = 4;
  c.grad_accum_steps = 1;
  c.learning_rate = 1e-2;
  c.max_epochs = 2;
  c.patience = 2;
  c.train_size = 16;
  c.val_size = 6;
  c.test_size = 6;
  c.teacher_epochs = 1;
  c.teacher_batch_size = 8;
  c.seeds = {3};
  c.precision = 64;
  return c;
}

template <typename T>
struct Bench {
  gatekd::DistillConfig cfg;
  gatekd::CharVocab vocab;
  gatekd::DatasetSplits splits;
  std::unique_ptr<gatekd::FrozenModel<T>> teacher;
  gatekd::TeacherCache<T> cache;
  std::vector<gatekd::EncodedExample> encoded;

  explicit Bench(const gatekd::DistillConfig& c, std::uint64_t teacher_init = 1) : cfg(c) {
    using namespace gatekd;
    splits = load_or_generate_splits(cfg);
    teacher = std::make_unique<FrozenModel<T>>(freeze(Seq2SeqModel<T>(teacher_model_config(cfg, vocab), teacher_init)));
    cache = build_teacher_cache<T>(*teacher, splits.train, cfg.noise, cfg.teacher_seed, vocab);
    for (const auto& ex : splits.train) encoded.push_back(encode_example(ex, vocab));
  }

  [[nodiscard]] gatekd::TrainContext<T> context() const { return {&splits, teacher.get(), &cache}; }

  [[nodiscard]] std::vector<gatekd::StepItem<T>> items(std::size_t first, std::size_t count, bool with_teacher = true) const {
    std::vector<gatekd::StepItem<T>> out;
    for (std::size_t i = first; i < first + count; ++i)
      out.push_back({i, &encoded[i], with_teacher ? &cache.signals[i] : nullptr});
    return out;
  }

  [[nodiscard]] gatekd::LayerMap map() const {
    return gatekd::uniform_layer_map(cfg.student_layers, cfg.teacher_layers);
  }

  [[nodiscard]] gatekd::Student<T> student(std::uint64_t seed = 4) const {
    return gatekd::Student<T>(gatekd::student_model_config(cfg, vocab), cfg.teacher_dim, cfg.identity_projection, seed);
  }
};

template <typename T>
double max_param_diff(const gatekd::Seq2SeqModel<T>& a, const gatekd::Seq2SeqModel<T>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.params().size(); ++i)
    d = std::max(d, static_cast<double>((a.params()[i].value - b.params()[i].value).cwiseAbs().maxCoeff()));
  return d;
}

template <typename T>
double max_grad_diff(const gatekd::Seq2SeqModel<T>& a, const gatekd::Seq2SeqModel<T>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.params().size(); ++i)
    d = std::max(d, static_cast<double>((a.params()[i].grad - b.params()[i].grad).cwiseAbs().maxCoeff()));
  return d;
}

// Reference step built from model primitives only: batch-mean task
// cross-entropy plus lambda1 * mean-over-steps KL(p_T || softmax(z_S)) per
// example, with the KL gradient (softmax(z) - p_T) / steps written out here.
template <typename T>
void reference_kd_gradients(gatekd::Seq2SeqModel<T>& model, const std::vector<gatekd::StepItem<T>>& batch,
                            double lambda1) {
  using namespace gatekd;
  model.zero_grad();
  const T inv_n = T(1) / static_cast<T>(batch.size());
  for (const auto& item : batch) {
    Tape<T> tape;
    TraceVars tv = model.forward(tape, item.example->input, item.example->decoder_input);
    Var task = ad::cross_entropy(tape, tv.logits, item.example->decoder_target);
    std::vector<Var> terms{task};
    std::vector<T> weights{T(1)};
    if (lambda1 != 0.0 && item.teacher != nullptr) {
      const Mat<T>& z = tape.value(tv.logits);
      const Mat<T>& pt = item.teacher->soft;
      Mat<T> ps = softmax_rows<T>(z);
      T kl = 0;
      for (Eigen::Index i = 0; i < pt.size(); ++i) {
        const T p = pt.data()[i];
        if (p > T(0)) kl += p * (std::log(p) - std::log(std::max(ps.data()[i], T(1e-12))));
      }
      const T steps = static_cast<T>(z.rows());
      Mat<T> v(1, 1);
      v(0, 0) = kl / steps;
      Var logits = tv.logits;
      Mat<T> g = (ps - pt) / steps;
      terms.push_back(tape.record(std::move(v), {logits}, [logits, g](Tape<T>& tp, const Mat<T>& up) {
        tp.grad(logits) += up(0, 0) * g;
      }));
      weights.push_back(static_cast<T>(lambda1));
    }
    Var total = ad::weighted_sum(tape, terms, weights);
    tape.backward(total, inv_n);
  }
}

}  // namespace fixture
