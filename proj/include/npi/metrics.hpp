#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "npi/errors.hpp"

namespace npi {

// Lowercased maximal runs of ASCII letters, digits and apostrophes. Other
// bytes (punctuation, whitespace, non-ASCII) separate words.
inline std::vector<std::string> metric_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

enum class MetricKind : std::uint8_t { word_presence = 0, word_list_presence = 1, avg_word_length = 2 };

// Pure mapping from output text to a binary label. `polarity` true means the
// metric firing yields label 1; false inverts it.
struct TargetMetric {
  MetricKind kind = MetricKind::word_presence;
  // word_presence: phrases that must appear as consecutive whole words.
  // word_list_presence: single words, any of which fires.
  std::vector<std::string> words;
  float threshold = 0.0f;  // avg_word_length: fires when mean length exceeds it
  bool polarity = true;

  static TargetMetric word_presence(std::vector<std::string> phrases, bool polarity = true) {
    return {MetricKind::word_presence, std::move(phrases), 0.0f, polarity};
  }
  static TargetMetric word_list(std::vector<std::string> list, bool polarity = true) {
    return {MetricKind::word_list_presence, std::move(list), 0.0f, polarity};
  }
  static TargetMetric avg_word_length(float threshold, bool polarity = true) {
    return {MetricKind::avg_word_length, {}, threshold, polarity};
  }

  bool fires(std::string_view text) const {
    const auto ws = metric_words(text);
    switch (kind) {
      case MetricKind::word_presence:
        for (const auto& phrase : words) {
          const auto p = metric_words(phrase);
          if (p.empty() || p.size() > ws.size()) continue;
          for (std::size_t i = 0; i + p.size() <= ws.size(); ++i)
            if (std::equal(p.begin(), p.end(), ws.begin() + static_cast<std::ptrdiff_t>(i))) return true;
        }
        return false;
      case MetricKind::word_list_presence:
        for (const auto& target : words) {
          const auto t = metric_words(target);
          if (t.size() != 1) continue;
          if (std::find(ws.begin(), ws.end(), t[0]) != ws.end()) return true;
        }
        return false;
      case MetricKind::avg_word_length: {
        if (ws.empty()) return false;
        std::size_t chars = 0;
        for (const auto& w : ws) chars += w.size();
        return double(chars) / double(ws.size()) > double(threshold);
      }
    }
    return false;
  }

  int label(std::string_view text) const { return fires(text) == polarity ? 1 : 0; }

  std::string describe() const {
    std::string s;
    switch (kind) {
      case MetricKind::word_presence: s = "word_presence"; break;
      case MetricKind::word_list_presence: s = "word_list_presence"; break;
      case MetricKind::avg_word_length: s = "avg_word_length>" + std::to_string(threshold); break;
    }
    for (std::size_t i = 0; i < words.size(); ++i) s += (i ? "," : ":") + words[i];
    if (!polarity) s += " (inverted)";
    return s;
  }

  bool operator==(const TargetMetric&) const = default;
};

inline int label(std::string_view text, const TargetMetric& metric) { return metric.label(text); }

}  // namespace npi
