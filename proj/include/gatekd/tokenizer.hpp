// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "gatekd/common.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace gatekd {

/// Fixed character-level vocabulary shared by every synthetic task.
/// Ids 0 and 1 are the decoder's begin and end markers.
class CharVocab {
 public:
  static constexpr Token kBos = 0;
  static constexpr Token kEos = 1;

  CharVocab();

  [[nodiscard]] int size() const { return static_cast<int>(chars_.size()) + 2; }
  [[nodiscard]] std::vector<Token> encode(std::string_view text) const;
  /// Stops at the first end marker; begin markers are skipped.
  [[nodiscard]] std::string decode(std::span<const Token> ids) const;
  [[nodiscard]] bool contains(char c) const;
  [[nodiscard]] Token id(char c) const;

  /// Decoder input [BOS, y...] and next-token targets [y..., EOS].
  [[nodiscard]] std::vector<Token> decoder_input(std::string_view target) const;
  [[nodiscard]] std::vector<Token> decoder_target(std::string_view target) const;

 private:
  std::string chars_;
  std::vector<Token> lookup_;
};

}  // namespace gatekd
