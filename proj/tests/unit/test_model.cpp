#include "doctest.h"
#include "oracles.hpp"

#include "gatekd/model.hpp"
#include "gatekd/optimizer.hpp"
#include "gatekd/tokenizer.hpp"

#include <cmath>
#include <random>

using namespace gatekd;

namespace {

ModelConfig small_config(int layers = 2, int dim = 16, int heads = 2) {
  CharVocab vocab;
  ModelConfig c;
  c.vocab_size = vocab.size();
  c.hidden_dim = dim;
  c.num_layers = layers;
  c.num_heads = heads;
  c.max_seq_len = 32;
  return c;
}

const CharVocab& vocab() {
  static const CharVocab v;
  return v;
}

template <typename T>
double task_loss(Seq2SeqModel<T>& m, const std::vector<Token>& in, const std::vector<Token>& dec,
                 const std::vector<Token>& tgt, bool grad) {
  Tape<T> tape(grad);
  TraceVars v = m.forward(tape, in, dec);
  Var loss = ad::cross_entropy(tape, v.logits, tgt);
  if (grad) tape.backward(loss);
  return static_cast<double>(tape.value(loss)(0, 0));
}

std::size_t param_index(const Seq2SeqModel<double>& m, const std::string& name) {
  for (std::size_t i = 0; i < m.params().size(); ++i)
    if (m.params()[i].name == name) return i;
  FAIL("no parameter " << name);
  return 0;
}

}  // namespace

TEST_CASE("forward is deterministic and well formed") {
  Seq2SeqModel<double> m(small_config(), 3);
  const auto in = vocab().encode("Max Mikey");
  const auto dec = vocab().decoder_input("xy");
  const auto a = m.trace(in, dec);
  const auto b = m.trace(in, dec);
  CHECK(a.logits == b.logits);
  REQUIRE(a.hidden_states.size() == 2);
  REQUIRE(a.attention_maps.size() == 2);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(a.hidden_states[l] == b.hidden_states[l]);
    CHECK(a.hidden_states[l].rows() == 3);
    CHECK(a.hidden_states[l].cols() == 16);
    REQUIRE(a.attention_maps[l].size() == 2);
    for (const auto& head : a.attention_maps[l]) {
      CHECK(head.rows() == 3);
      CHECK(head.cols() == 3);
      for (Eigen::Index i = 0; i < 3; ++i) {
        CHECK(std::abs(head.row(i).sum() - 1.0) < 1e-12);
        for (Eigen::Index j = i + 1; j < 3; ++j) CHECK(head(i, j) == 0.0);
      }
    }
  }
  const auto p = softmax_rows<double>(a.logits);
  for (Eigen::Index i = 0; i < p.rows(); ++i) CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-6);
}

TEST_CASE("per-example outputs do not depend on what else was run") {
  Seq2SeqModel<double> m(small_config(), 4);
  const auto in = vocab().encode("Holly Max");
  const auto dec = vocab().decoder_input("yx");
  const auto alone = m.trace(in, dec);
  (void)m.trace(vocab().encode("Cynthia"), vocab().decoder_input("a"));
  CHECK(m.trace(in, dec).logits == alone.logits);
}

TEST_CASE("config validation") {
  auto c = small_config();
  c.num_heads = 3;
  CHECK_THROWS_AS(Seq2SeqModel<double>(c, 1), InvalidInput);
  c = small_config();
  c.vocab_size = 1;
  CHECK_THROWS_AS(Seq2SeqModel<double>(c, 1), InvalidInput);
  Seq2SeqModel<double> m(small_config(), 1);
  CHECK_THROWS_AS(m.trace(std::vector<Token>{}, vocab().decoder_input("a")), InvalidInput);
  CHECK_THROWS_AS(m.trace(std::vector<Token>{999}, vocab().decoder_input("a")), InvalidInput);
}

TEST_CASE("student has fewer parameters than teacher") {
  auto s = small_config(2, 64, 2);
  auto t = small_config(4, 128, 4);
  CHECK(Seq2SeqModel<float>(s, 1).parameter_count() < Seq2SeqModel<float>(t, 1).parameter_count());
}

TEST_CASE("freeze contract: teacher unchanged while the student trains against it") {
  FrozenModel<double> teacher = freeze(Seq2SeqModel<double>(small_config(2, 16, 2), 10));
  Seq2SeqModel<double> student(small_config(1, 8, 1), 11);
  const auto before = teacher.checksum();
  const auto student_before = student.checksum();
  std::vector<Param<double>*> ps;
  for (auto& p : student.params()) ps.push_back(&p);
  AdamW<double> opt(ps, AdamWConfig{});
  const auto in = vocab().encode("Max Holly");
  const auto dec = vocab().decoder_input("xy");
  const auto tgt = vocab().decoder_target("xy");
  for (int step = 0; step < 100; ++step) {
    student.zero_grad();
    Tape<double> tape;
    TraceVars t = teacher.model().forward_frozen(tape, in, dec);
    TraceVars s = student.forward(tape, in, dec);
    // Student matches the teacher's output distribution through the tape.
    Var tp = ad::softmax_rows(tape, t.logits, false);
    Var sp = ad::softmax_rows(tape, s.logits, false);
    Var diff = ad::add(tape, sp, ad::scale(tape, tp, -1.0));
    Var ones = tape.constant(Mat<double>::Ones(3, 1));
    Var rowsum = ad::matmul(tape, ad::matmul_nt(tape, diff, diff), ones);
    Var loss = ad::weighted_sum(tape, {ad::cross_entropy(tape, s.logits, tgt),
                                       ad::matmul(tape, tape.constant(Mat<double>::Ones(1, 3)), rowsum)},
                                {1.0, 1.0});
    CHECK_FALSE(tape.requires_grad(tp));
    tape.backward(loss);
    opt.step(1e-2);
    if (step == 0) CHECK(student.checksum() != student_before);
  }
  CHECK(teacher.checksum() == before);
  for (const auto& p : teacher.model().params()) CHECK(p.grad.cwiseAbs().sum() == 0.0);
}

TEST_CASE("greedy decode: EOS-favoring model, determinism, overfit one sample") {
  Seq2SeqModel<double> m(small_config(), 5);
  const auto in = vocab().encode("Max Mikey Cynthia Holly");
  auto& bias = m.params()[param_index(m, "output.b")].value;
  bias(0, CharVocab::kEos) = 1e4;
  CHECK(m.greedy_decode(in, 10).empty());
  bias(0, CharVocab::kEos) = 0;
  CHECK(m.greedy_decode(in, 10) == m.greedy_decode(in, 10));
  CHECK(m.greedy_decode(in, 3).size() <= 3);

  Seq2SeqModel<double> fit(small_config(), 6);
  std::vector<Param<double>*> ps;
  for (auto& p : fit.params()) ps.push_back(&p);
  AdamW<double> opt(ps, AdamWConfig{});
  const auto dec = vocab().decoder_input("xyay");
  const auto tgt = vocab().decoder_target("xyay");
  for (int i = 0; i < 200; ++i) {
    fit.zero_grad();
    task_loss(fit, in, dec, tgt, true);
    opt.step(3e-3);
  }
  CHECK(vocab().decode(fit.greedy_decode(in, 10)) == "xyay");
}

TEST_CASE("end-to-end gradient of a 2-layer model matches finite differences on 1% of parameters") {
  Seq2SeqModel<double> m(small_config(2, 16, 2), 8);
  const auto in = vocab().encode("Max Holly");
  const auto dec = vocab().decoder_input("xy");
  const auto tgt = vocab().decoder_target("xy");
  m.zero_grad();
  task_loss(m, in, dec, tgt, true);
  std::mt19937_64 rng(17);
  std::size_t checked = 0;
  double worst = 0;
  for (auto& p : m.params()) {
    const Mat<double> g = p.grad;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      if (rng() % 100 != 0) continue;
      const double fd = oracle::central_difference([&] { return task_loss(m, in, dec, tgt, false); }, p.value, i);
      worst = std::max(worst, oracle::rel_err(g.data()[i], fd, 1e-7));
      ++checked;
    }
  }
  CHECK(checked > 50);
  CHECK(worst <= 1e-3);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = oracle::scratch_dir("ckpt");
  auto cfg = small_config();
  cfg.role = ModelRole::teacher;
  Seq2SeqModel<double> m(cfg, 12);
  save_checkpoint(m, dir / "d");
  const auto back = load_checkpoint<double>(dir / "d");
  CHECK(back.checksum() == m.checksum());
  CHECK(back.config().role == ModelRole::teacher);
  const auto in = vocab().encode("Max");
  const auto dec = vocab().decoder_input("x");
  CHECK(back.trace(in, dec).logits == m.trace(in, dec).logits);

  Seq2SeqModel<float> mf(cfg, 12);
  save_checkpoint(mf, dir / "f");
  CHECK(load_checkpoint<float>(dir / "f").checksum() == mf.checksum());

  // A flipped byte is caught by the manifest checksum.
  const auto bin = dir / "d" / "params.bin";
  std::string bytes = oracle::slurp(bin);
  bytes[bytes.size() / 2] ^= 0x10;
  std::ofstream(bin, std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_checkpoint<double>(dir / "d"), InvalidInput);
  CHECK_THROWS_AS(load_checkpoint<double>(dir / "missing"), InvalidInput);
  std::filesystem::remove_all(dir);
}

TEST_CASE("copy_values_from across precisions") {
  Seq2SeqModel<float> f(small_config(), 2);
  Seq2SeqModel<double> d(small_config(), 3);
  d.copy_values_from(f);
  const auto in = vocab().encode("Max");
  const auto dec = vocab().decoder_input("x");
  CHECK((f.trace(in, dec).logits.cast<double>() - d.trace(in, dec).logits).cwiseAbs().maxCoeff() < 1e-4);
}
