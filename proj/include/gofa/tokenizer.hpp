#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace gofa {

/// Byte-level tokenizer: ids 0..255 are raw bytes, followed by four specials.
/// Every byte string round-trips exactly.
struct ByteTokenizer {
  static constexpr int kEos = 256;
  static constexpr int kBos = 257;
  static constexpr int kPad = 258;
  static constexpr int kSep = 259;
  static constexpr int kVocabSize = 260;

  static std::vector<int> encode(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    return ids;
  }

  /// Specials are dropped.
  static std::string decode(const std::vector<int>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
      if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
    }
    return out;
  }
};

}  // namespace gofa
