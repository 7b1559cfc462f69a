// SPDX-License-Identifier: Apache-2.0
#pragma once

// Pre-norm encoder-decoder transformer used for both teacher and student.
//
// Every forward pass exposes the output logits, the decoder residual stream
// after each layer, and each decoder self-attention head's row-stochastic
// map. Positions are fixed sinusoids; the token embedding is shared between
// encoder and decoder.

#include "gatekd/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace gatekd {

enum class ModelRole { teacher, student };

struct ModelConfig {
  int vocab_size = 0;
  int hidden_dim = 64;
  int num_layers = 2;
  int num_heads = 2;
  int max_seq_len = 64;
  ModelRole role = ModelRole::student;

  void validate() const;
  [[nodiscard]] int head_dim() const { return hidden_dim / num_heads; }
};

template <typename T>
struct ForwardTrace {
  Mat<T> logits;                                   // steps x vocab
  std::vector<Mat<T>> hidden_states;               // per decoder layer, steps x hidden
  std::vector<std::vector<Mat<T>>> attention_maps;  // [layer][head], steps x steps
};

/// Tape handles for one forward pass.
struct TraceVars {
  Var logits;
  std::vector<Var> hidden;
  std::vector<std::vector<Var>> attention;
};

template <typename T>
class Seq2SeqModel {
 public:
  Seq2SeqModel(const ModelConfig& cfg, std::uint64_t seed);

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] std::vector<Param<T>>& params() { return params_; }
  [[nodiscard]] const std::vector<Param<T>>& params() const { return params_; }
  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] std::uint64_t checksum() const;
  void zero_grad();

  /// Records a differentiable pass; parameter gradients land in params().
  TraceVars forward(Tape<T>& tape, std::span<const Token> input, std::span<const Token> decoder_input);
  /// Records a pass whose parameters are constants.
  TraceVars forward_frozen(Tape<T>& tape, std::span<const Token> input,
                           std::span<const Token> decoder_input) const;

  [[nodiscard]] ForwardTrace<T> trace(std::span<const Token> input, std::span<const Token> decoder_input) const;

  /// Argmax decoding from the begin marker until the end marker or max_len
  /// tokens. The end marker is not included in the result.
  [[nodiscard]] std::vector<Token> greedy_decode(std::span<const Token> input, int max_len) const;

  /// Copies parameter values from a model with the same configuration.
  template <typename U>
  void copy_values_from(const Seq2SeqModel<U>& other);

 private:
  struct Norm { int gain, bias; };
  struct Attention { int wq, wk, wv, wo; };
  struct Ffn { int w1, b1, w2, b2; };
  struct EncoderLayer { Norm ln1; Attention attn; Norm ln2; Ffn ffn; };
  struct DecoderLayer { Norm ln1; Attention self; Norm ln2; Attention cross; Norm ln3; Ffn ffn; };

  template <typename LeafFn>
  Var encode(Tape<T>& t, LeafFn&& leaf, std::span<const Token> input) const;
  template <typename LeafFn>
  TraceVars decode(Tape<T>& t, LeafFn&& leaf, Var memory, std::span<const Token> decoder_input) const;
  template <typename LeafFn>
  Var attention(Tape<T>& t, LeafFn&& leaf, const Attention& a, Var queries, Var keys, bool causal,
                std::vector<Var>* maps) const;
  template <typename LeafFn>
  Var feed_forward(Tape<T>& t, LeafFn&& leaf, const Ffn& f, Var x) const;

  int add_param(std::string name, Mat<T> value);

  ModelConfig cfg_;
  std::vector<Param<T>> params_;
  Mat<T> positions_;
  int embedding_ = -1;
  std::vector<EncoderLayer> encoder_;
  Norm encoder_norm_{};
  std::vector<DecoderLayer> decoder_;
  Norm decoder_norm_{};
  int out_w_ = -1;
  int out_b_ = -1;

  template <typename U>
  friend class Seq2SeqModel;
};

/// Read-only handle: forward and decode remain available, parameters never
/// change and never receive gradient.
template <typename T>
class FrozenModel {
 public:
  explicit FrozenModel(Seq2SeqModel<T> model)
      : model_(std::make_shared<const Seq2SeqModel<T>>(std::move(model))) {}

  [[nodiscard]] const Seq2SeqModel<T>& model() const { return *model_; }
  [[nodiscard]] const ModelConfig& config() const { return model_->config(); }
  [[nodiscard]] std::uint64_t checksum() const { return model_->checksum(); }
  [[nodiscard]] ForwardTrace<T> trace(std::span<const Token> input, std::span<const Token> dec) const {
    return model_->trace(input, dec);
  }
  [[nodiscard]] std::vector<Token> greedy_decode(std::span<const Token> input, int max_len) const {
    return model_->greedy_decode(input, max_len);
  }

 private:
  std::shared_ptr<const Seq2SeqModel<T>> model_;
};

template <typename T>
FrozenModel<T> freeze(Seq2SeqModel<T> model) {
  return FrozenModel<T>(std::move(model));
}

/// Checkpoints: `manifest.json` (config, parameter names/shapes/offsets,
/// checksum) beside `params.bin`, the parameters concatenated row-major as
/// little-endian values of the stored scalar type.
template <typename T>
void save_checkpoint(const Seq2SeqModel<T>& model, const std::filesystem::path& dir);
template <typename T>
Seq2SeqModel<T> load_checkpoint(const std::filesystem::path& dir);

std::string_view to_string(ModelRole r);

}  // namespace gatekd
