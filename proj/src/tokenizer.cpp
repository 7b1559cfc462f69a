// SPDX-License-Identifier: Apache-2.0
#include "gatekd/tokenizer.hpp"

namespace gatekd {

CharVocab::CharVocab()
    : chars_(" abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789:;,|-?."),
      lookup_(256, -1) {
  for (std::size_t i = 0; i < chars_.size(); ++i)
    lookup_[static_cast<unsigned char>(chars_[i])] = static_cast<Token>(i + 2);
}

bool CharVocab::contains(char c) const { return lookup_[static_cast<unsigned char>(c)] >= 0; }

Token CharVocab::id(char c) const {
  const Token t = lookup_[static_cast<unsigned char>(c)];
  require(t >= 0, std::string("character not in vocabulary: '") + c + "'");
  return t;
}

std::vector<Token> CharVocab::encode(std::string_view text) const {
  std::vector<Token> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(id(c));
  return out;
}

std::string CharVocab::decode(std::span<const Token> ids) const {
  std::string out;
  for (Token t : ids) {
    if (t == kEos) break;
    if (t == kBos) continue;
    require(t >= 2 && t < size(), "token id out of range");
    out.push_back(chars_[static_cast<std::size_t>(t - 2)]);
  }
  return out;
}

std::vector<Token> CharVocab::decoder_input(std::string_view target) const {
  std::vector<Token> out{kBos};
  for (char c : target) out.push_back(id(c));
  return out;
}

std::vector<Token> CharVocab::decoder_target(std::string_view target) const {
  std::vector<Token> out = encode(target);
  out.push_back(kEos);
  return out;
}

}  // namespace gatekd
