#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "npi/binary_io.hpp"
#include "npi/errors.hpp"

namespace npi {

using TokenId = std::uint32_t;
using Tokens = std::vector<TokenId>;

enum class TokenizerKind : std::uint8_t { character = 0, word = 1 };

namespace utf8 {

// Splits into code points; invalid bytes become single-byte units so nothing
// is dropped.
inline std::vector<std::string> split(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xf0) len = 4;
    else if (c >= 0xe0) len = 3;
    else if (c >= 0xc0) len = 2;
    if (i + len > s.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xc0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace utf8

inline std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

// Token alphabet. Ids are dense; 0 is padding and 1 is the unknown token.
// Character vocabularies round-trip text exactly; word vocabularies split on
// whitespace and rejoin with single spaces.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;

  Vocabulary() : Vocabulary(TokenizerKind::character, {}) {}

  Vocabulary(TokenizerKind kind, std::vector<std::string> tokens) : kind_(kind) {
    tokens_ = {"<pad>", "<unk>"};
    for (auto& t : tokens) {
      if (t == "<pad>" || t == "<unk>") continue;
      if (!index_.contains(t)) {
        index_.emplace(t, static_cast<TokenId>(tokens_.size() + 0));
        tokens_.push_back(std::move(t));
      }
    }
    index_["<pad>"] = kPad;
    index_["<unk>"] = kUnk;
  }

  static Vocabulary build(std::string_view corpus, TokenizerKind kind) {
    std::set<std::string> seen;
    if (kind == TokenizerKind::character) {
      for (auto& cp : utf8::split(corpus)) seen.insert(std::move(cp));
    } else {
      for (auto w : split_whitespace(corpus)) seen.emplace(w);
    }
    return Vocabulary(kind, std::vector<std::string>(seen.begin(), seen.end()));
  }

  TokenizerKind kind() const { return kind_; }
  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenId id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }

  Tokens tokenize(std::string_view text) const {
    Tokens out;
    if (kind_ == TokenizerKind::character) {
      for (const auto& cp : utf8::split(text)) out.push_back(id(cp));
    } else {
      for (auto w : split_whitespace(text)) out.push_back(id(w));
    }
    return out;
  }

  std::string detokenize(std::span<const TokenId> ids) const {
    std::string out;
    bool first = true;
    for (TokenId t : ids) {
      if (t == kPad) continue;
      if (kind_ == TokenizerKind::word && !first) out.push_back(' ');
      out += t == kUnk ? unknown_text() : tokens_.at(t);
      first = false;
    }
    return out;
  }

  // Text used to render the unknown token.
  std::string unknown_text() const { return kind_ == TokenizerKind::character ? "\xEF\xBF\xBD" : "<unk>"; }

  // Tokens that separate words; used to find word boundaries in character
  // vocabularies.
  bool is_separator(TokenId id) const {
    if (kind_ == TokenizerKind::word) return true;
    if (id == kPad) return true;
    const auto& t = tokens_.at(id);
    return t.size() == 1 && std::isspace(static_cast<unsigned char>(t[0]));
  }

  // One token per line, line index = id. Control characters are escaped.
  std::string serialize() const {
    std::string out;
    for (const auto& t : tokens_) {
      for (char c : t) {
        switch (c) {
          case '\n': out += "\\n"; break;
          case '\r': out += "\\r"; break;
          case '\t': out += "\\t"; break;
          case '\\': out += "\\\\"; break;
          default: out.push_back(c);
        }
      }
      out.push_back('\n');
    }
    return out;
  }

  static Vocabulary deserialize(std::string_view text, TokenizerKind kind) {
    std::vector<std::string> tokens;
    std::string cur;
    for (std::size_t i = 0; i < text.size(); ++i) {
      const char c = text[i];
      if (c == '\n') {
        tokens.push_back(std::move(cur));
        cur.clear();
      } else if (c == '\\' && i + 1 < text.size()) {
        const char e = text[++i];
        cur.push_back(e == 'n' ? '\n' : e == 'r' ? '\r' : e == 't' ? '\t' : e);
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
      throw FormatError("vocabulary file must start with <pad> and <unk>");
    }
    Vocabulary v(kind, std::vector<std::string>(tokens.begin() + 2, tokens.end()));
    if (v.size() != tokens.size()) throw FormatError("vocabulary file has duplicate tokens");
    return v;
  }

  void save(const std::string& path) const { write_file(path, serialize()); }
  static Vocabulary load(const std::string& path, TokenizerKind kind) { return deserialize(read_file(path), kind); }

 private:
  TokenizerKind kind_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace npi
