// SPDX-License-Identifier: Apache-2.0
#include "gatekd/model.hpp"

#include "gatekd/tokenizer.hpp"

#include "json.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace gatekd {

void ModelConfig::validate() const {
  require(vocab_size >= 2, "model: vocab_size must be at least 2");
  require(hidden_dim >= 1 && num_layers >= 1 && num_heads >= 1 && max_seq_len >= 1,
          "model: dimensions must be positive");
  require(hidden_dim % num_heads == 0, "model: hidden_dim must be divisible by num_heads");
}

std::string_view to_string(ModelRole r) { return r == ModelRole::teacher ? "teacher" : "student"; }

namespace {

template <typename T>
Mat<T> sinusoids(int len, int dim) {
  Mat<T> pe(len, dim);
  for (int pos = 0; pos < len; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      const double angle = pos * freq;
      pe(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

}  // namespace

template <typename T>
int Seq2SeqModel<T>::add_param(std::string name, Mat<T> value) {
  Param<T> p;
  p.name = std::move(name);
  p.value = std::move(value);
  p.zero_grad();
  params_.push_back(std::move(p));
  return static_cast<int>(params_.size() - 1);
}

template <typename T>
Seq2SeqModel<T>::Seq2SeqModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const int d = cfg_.hidden_dim;
  const int ff = 4 * d;
  const double resid_scale = 1.0 / std::sqrt(2.0 * cfg_.num_layers);

  auto normal = [&](int rows, int cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
    return m;
  };
  auto linear = [&](const std::string& name, int in, int out, double extra = 1.0) {
    return add_param(name, normal(in, out, extra / std::sqrt(static_cast<double>(in))));
  };
  auto norm = [&](const std::string& name) {
    return Norm{add_param(name + ".g", Mat<T>::Ones(1, d)), add_param(name + ".b", Mat<T>::Zero(1, d))};
  };
  auto attn = [&](const std::string& name) {
    return Attention{linear(name + ".wq", d, d), linear(name + ".wk", d, d), linear(name + ".wv", d, d),
                     linear(name + ".wo", d, d, resid_scale)};
  };
  auto ffn = [&](const std::string& name) {
    return Ffn{linear(name + ".w1", d, ff), add_param(name + ".b1", Mat<T>::Zero(1, ff)),
               linear(name + ".w2", ff, d, resid_scale), add_param(name + ".b2", Mat<T>::Zero(1, d))};
  };

  params_.reserve(static_cast<std::size_t>(8 + cfg_.num_layers * 30));
  embedding_ = add_param("embedding", normal(cfg_.vocab_size, d, 1.0));
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    EncoderLayer layer;
    layer.ln1 = norm(p + ".ln1");
    layer.attn = attn(p + ".self_attn");
    layer.ln2 = norm(p + ".ln2");
    layer.ffn = ffn(p + ".ffn");
    encoder_.push_back(layer);
  }
  encoder_norm_ = norm("encoder.final_norm");
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    DecoderLayer layer;
    layer.ln1 = norm(p + ".ln1");
    layer.self = attn(p + ".self_attn");
    layer.ln2 = norm(p + ".ln2");
    layer.cross = attn(p + ".cross_attn");
    layer.ln3 = norm(p + ".ln3");
    layer.ffn = ffn(p + ".ffn");
    decoder_.push_back(layer);
  }
  decoder_norm_ = norm("decoder.final_norm");
  out_w_ = linear("output.w", d, cfg_.vocab_size);
  out_b_ = add_param("output.b", Mat<T>::Zero(1, cfg_.vocab_size));
  positions_ = sinusoids<T>(cfg_.max_seq_len, d);
}

template <typename T>
std::size_t Seq2SeqModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename T>
std::uint64_t Seq2SeqModel<T>::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params_) {
    h = fnv1a(std::as_bytes(std::span(p.value.data(), static_cast<std::size_t>(p.value.size()))), h);
  }
  return h;
}

template <typename T>
void Seq2SeqModel<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
template <typename LeafFn>
Var Seq2SeqModel<T>::attention(Tape<T>& t, LeafFn&& leaf, const Attention& a, Var queries, Var keys,
                               bool causal, std::vector<Var>* maps) const {
  const int dh = cfg_.head_dim();
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  Var q = ad::matmul(t, queries, leaf(a.wq));
  Var k = ad::matmul(t, keys, leaf(a.wk));
  Var v = ad::matmul(t, keys, leaf(a.wv));
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg_.num_heads));
  for (int h = 0; h < cfg_.num_heads; ++h) {
    Var qh = cfg_.num_heads == 1 ? q : ad::slice_cols(t, q, h * dh, dh);
    Var kh = cfg_.num_heads == 1 ? k : ad::slice_cols(t, k, h * dh, dh);
    Var vh = cfg_.num_heads == 1 ? v : ad::slice_cols(t, v, h * dh, dh);
    Var scores = ad::scale(t, ad::matmul_nt(t, qh, kh), inv_sqrt);
    Var probs = ad::softmax_rows(t, scores, causal);
    if (maps != nullptr) maps->push_back(probs);
    heads.push_back(ad::matmul(t, probs, vh));
  }
  Var joined = cfg_.num_heads == 1 ? heads[0] : ad::concat_cols(t, heads);
  return ad::matmul(t, joined, leaf(a.wo));
}

template <typename T>
template <typename LeafFn>
Var Seq2SeqModel<T>::feed_forward(Tape<T>& t, LeafFn&& leaf, const Ffn& f, Var x) const {
  Var h = ad::gelu(t, ad::add_row(t, ad::matmul(t, x, leaf(f.w1)), leaf(f.b1)));
  return ad::add_row(t, ad::matmul(t, h, leaf(f.w2)), leaf(f.b2));
}

template <typename T>
template <typename LeafFn>
Var Seq2SeqModel<T>::encode(Tape<T>& t, LeafFn&& leaf, std::span<const Token> input) const {
  const auto n = static_cast<int>(input.size());
  require(n >= 1, "model: empty input sequence");
  require(n <= cfg_.max_seq_len, "model: input longer than max_seq_len");
  for (Token tok : input) require(tok >= 0 && tok < cfg_.vocab_size, "model: input token out of range");

  Var x = ad::add_const(t, ad::embed(t, leaf(embedding_), input), Mat<T>(positions_.topRows(n)));
  for (const auto& layer : encoder_) {
    Var h = ad::layer_norm(t, x, leaf(layer.ln1.gain), leaf(layer.ln1.bias));
    x = ad::add(t, x, attention(t, leaf, layer.attn, h, h, false, nullptr));
    h = ad::layer_norm(t, x, leaf(layer.ln2.gain), leaf(layer.ln2.bias));
    x = ad::add(t, x, feed_forward(t, leaf, layer.ffn, h));
  }
  return ad::layer_norm(t, x, leaf(encoder_norm_.gain), leaf(encoder_norm_.bias));
}

template <typename T>
template <typename LeafFn>
TraceVars Seq2SeqModel<T>::decode(Tape<T>& t, LeafFn&& leaf, Var memory,
                                  std::span<const Token> decoder_input) const {
  const auto n = static_cast<int>(decoder_input.size());
  require(n >= 1, "model: empty decoder input");
  require(n <= cfg_.max_seq_len, "model: decoder input longer than max_seq_len");
  for (Token tok : decoder_input) require(tok >= 0 && tok < cfg_.vocab_size, "model: decoder token out of range");

  TraceVars out;
  Var x = ad::add_const(t, ad::embed(t, leaf(embedding_), decoder_input), Mat<T>(positions_.topRows(n)));
  for (const auto& layer : decoder_) {
    std::vector<Var> maps;
    Var h = ad::layer_norm(t, x, leaf(layer.ln1.gain), leaf(layer.ln1.bias));
    x = ad::add(t, x, attention(t, leaf, layer.self, h, h, true, &maps));
    h = ad::layer_norm(t, x, leaf(layer.ln2.gain), leaf(layer.ln2.bias));
    x = ad::add(t, x, attention(t, leaf, layer.cross, h, memory, false, nullptr));
    h = ad::layer_norm(t, x, leaf(layer.ln3.gain), leaf(layer.ln3.bias));
    x = ad::add(t, x, feed_forward(t, leaf, layer.ffn, h));
    out.hidden.push_back(x);
    out.attention.push_back(std::move(maps));
  }
  Var y = ad::layer_norm(t, x, leaf(decoder_norm_.gain), leaf(decoder_norm_.bias));
  out.logits = ad::add_row(t, ad::matmul(t, y, leaf(out_w_)), leaf(out_b_));
  return out;
}

template <typename T>
TraceVars Seq2SeqModel<T>::forward(Tape<T>& tape, std::span<const Token> input,
                                   std::span<const Token> decoder_input) {
  auto leaf = [&](int idx) { return tape.leaf(params_[static_cast<std::size_t>(idx)]); };
  Var memory = encode(tape, leaf, input);
  return decode(tape, leaf, memory, decoder_input);
}

template <typename T>
TraceVars Seq2SeqModel<T>::forward_frozen(Tape<T>& tape, std::span<const Token> input,
                                          std::span<const Token> decoder_input) const {
  auto leaf = [&](int idx) { return tape.frozen(params_[static_cast<std::size_t>(idx)]); };
  Var memory = encode(tape, leaf, input);
  return decode(tape, leaf, memory, decoder_input);
}

template <typename T>
ForwardTrace<T> Seq2SeqModel<T>::trace(std::span<const Token> input, std::span<const Token> decoder_input) const {
  Tape<T> tape(false);
  TraceVars v = forward_frozen(tape, input, decoder_input);
  ForwardTrace<T> tr;
  tr.logits = tape.value(v.logits);
  for (Var h : v.hidden) tr.hidden_states.push_back(tape.value(h));
  for (const auto& layer : v.attention) {
    std::vector<Mat<T>> heads;
    for (Var a : layer) heads.push_back(tape.value(a));
    tr.attention_maps.push_back(std::move(heads));
  }
  return tr;
}

template <typename T>
std::vector<Token> Seq2SeqModel<T>::greedy_decode(std::span<const Token> input, int max_len) const {
  Tape<T> tape(false);
  auto leaf = [&](int idx) { return tape.frozen(params_[static_cast<std::size_t>(idx)]); };
  Var memory = encode(tape, leaf, input);
  std::vector<Token> prefix{CharVocab::kBos};
  std::vector<Token> out;
  const int limit = std::min(max_len, cfg_.max_seq_len - 1);
  while (static_cast<int>(out.size()) < limit) {
    TraceVars v = decode(tape, leaf, memory, prefix);
    const Mat<T>& logits = tape.value(v.logits);
    Eigen::Index best = 0;
    logits.row(logits.rows() - 1).maxCoeff(&best);
    const auto tok = static_cast<Token>(best);
    if (tok == CharVocab::kEos) break;
    out.push_back(tok);
    prefix.push_back(tok);
  }
  return out;
}

template <typename T>
template <typename U>
void Seq2SeqModel<T>::copy_values_from(const Seq2SeqModel<U>& other) {
  require(other.params_.size() == params_.size(), "copy_values_from: parameter layout differs");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    require(other.params_[i].value.rows() == params_[i].value.rows() &&
                other.params_[i].value.cols() == params_[i].value.cols(),
            "copy_values_from: shape mismatch for " + params_[i].name);
    params_[i].value = other.params_[i].value.template cast<T>();
  }
}

// ---------------------------------------------------------------- checkpoints

namespace {

template <typename T>
constexpr const char* scalar_name() {
  return std::is_same_v<T, double> ? "float64" : "float32";
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

template <typename S>
std::vector<S> read_values(std::ifstream& in, std::size_t count) {
  std::vector<S> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(S)));
  require(static_cast<std::size_t>(in.gcount()) == count * sizeof(S), "checkpoint: truncated params.bin");
  return buf;
}

}  // namespace

template <typename T>
void save_checkpoint(const Seq2SeqModel<T>& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const ModelConfig& c = model.config();
  nlohmann::ordered_json manifest;
  manifest["format"] = "gatekd-checkpoint-v1";
  manifest["scalar"] = scalar_name<T>();
  manifest["config"] = {{"vocab_size", c.vocab_size}, {"hidden_dim", c.hidden_dim},
                        {"num_layers", c.num_layers}, {"num_heads", c.num_heads},
                        {"max_seq_len", c.max_seq_len}, {"role", std::string(to_string(c.role))}};
  auto entries = nlohmann::ordered_json::array();
  std::ofstream bin(dir / "params.bin", std::ios::binary);
  require(static_cast<bool>(bin), "checkpoint: cannot write params.bin");
  std::size_t offset = 0;
  for (const auto& p : model.params()) {
    const auto count = static_cast<std::size_t>(p.value.size());
    entries.push_back({{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"offset", offset}});
    bin.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(count * sizeof(T)));
    offset += count;
  }
  manifest["params"] = std::move(entries);
  manifest["checksum"] = hex64(model.checksum());
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

template <typename T>
Seq2SeqModel<T> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  require(static_cast<bool>(mf), "checkpoint: missing manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(mf);
  require(manifest.value("format", "") == "gatekd-checkpoint-v1", "checkpoint: unknown format");
  const auto& jc = manifest.at("config");
  ModelConfig cfg;
  cfg.vocab_size = jc.at("vocab_size");
  cfg.hidden_dim = jc.at("hidden_dim");
  cfg.num_layers = jc.at("num_layers");
  cfg.num_heads = jc.at("num_heads");
  cfg.max_seq_len = jc.at("max_seq_len");
  cfg.role = jc.at("role") == "teacher" ? ModelRole::teacher : ModelRole::student;

  Seq2SeqModel<T> model(cfg, 0);
  const std::string scalar = manifest.at("scalar");
  std::ifstream bin(dir / "params.bin", std::ios::binary);
  require(static_cast<bool>(bin), "checkpoint: missing params.bin");
  const auto& entries = manifest.at("params");
  require(entries.size() == model.params().size(), "checkpoint: parameter count mismatch");
  std::size_t i = 0;
  for (auto& p : model.params()) {
    const auto& e = entries[i++];
    require(e.at("name") == p.name, "checkpoint: parameter order mismatch at " + p.name);
    require(e.at("shape")[0] == p.value.rows() && e.at("shape")[1] == p.value.cols(),
            "checkpoint: shape mismatch for " + p.name);
    const auto count = static_cast<std::size_t>(p.value.size());
    if (scalar == "float64") {
      auto v = read_values<double>(bin, count);
      for (std::size_t j = 0; j < count; ++j) p.value.data()[j] = static_cast<T>(v[j]);
    } else {
      require(scalar == "float32", "checkpoint: unknown scalar type " + scalar);
      auto v = read_values<float>(bin, count);
      for (std::size_t j = 0; j < count; ++j) p.value.data()[j] = static_cast<T>(v[j]);
    }
  }
  if (scalar == scalar_name<T>()) {
    require(manifest.at("checksum") == hex64(model.checksum()), "checkpoint: checksum mismatch");
  }
  return model;
}

template class Seq2SeqModel<float>;
template class Seq2SeqModel<double>;
template void Seq2SeqModel<float>::copy_values_from<double>(const Seq2SeqModel<double>&);
template void Seq2SeqModel<double>::copy_values_from<float>(const Seq2SeqModel<float>&);
template void Seq2SeqModel<float>::copy_values_from<float>(const Seq2SeqModel<float>&);
template void Seq2SeqModel<double>::copy_values_from<double>(const Seq2SeqModel<double>&);
template void save_checkpoint<float>(const Seq2SeqModel<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const Seq2SeqModel<double>&, const std::filesystem::path&);
template Seq2SeqModel<float> load_checkpoint<float>(const std::filesystem::path&);
template Seq2SeqModel<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace gatekd
