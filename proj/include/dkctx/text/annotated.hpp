// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dkctx/text/vocab.hpp"

namespace dkctx {

/// Half-open token span [start, end) linked to an entity by name.
struct Mention {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string entity;

  bool operator==(const Mention&) const = default;
};

struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

struct AnnotatedText {
  std::vector<std::string> words;  // surface tokens, words[0] == "[CLS]"
  std::vector<TokenId> tokens;
  std::vector<Mention> mentions;   // sorted by start
  std::vector<bool> attention_mask;
  std::vector<std::size_t> segments;

  std::size_t size() const { return tokens.size(); }
  std::size_t num_real() const { return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), true)); }

  /// Text after [CLS], padding dropped.
  std::string text() const {
    std::string out;
    for (std::size_t i = 1; i < words.size(); ++i) {
      if (!attention_mask[i]) continue;
      if (!out.empty()) out += ' ';
      out += words[i];
    }
    return out;
  }

  void validate() const {
    const std::size_t n = tokens.size();
    if (n == 0 || words.size() != n || attention_mask.size() != n || segments.size() != n)
      throw ShapeError("annotated text: inconsistent field lengths");
    if (words[0] != special::kCls) throw Error("annotated text must start with [CLS]");
    std::size_t prev_end = 1;
    for (const Mention& m : mentions) {
      if (m.start < 1 || m.end <= m.start || m.end > n)
        throw Error("mention (" + std::to_string(m.start) + "," + std::to_string(m.end) + ") out of bounds for " +
                    std::to_string(n) + " tokens");
      if (m.start < prev_end) throw Error("mentions overlap or are unsorted at " + std::to_string(m.start));
      if (m.entity.empty()) throw Error("mention without entity");
      prev_end = m.end;
    }
  }
};

namespace detail {

inline bool word_char(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

}  // namespace detail

/// Lowercased whitespace/punctuation split. Runs of alphanumerics and '_'
/// form words, every other visible character is its own token. Reserved
/// bracket tokens such as [ENT] pass through untouched.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (c == '[') {
      bool matched = false;
      for (auto s : special::kAll) {
        if (text.compare(i, s.size(), s) == 0) {
          out.emplace_back(s);
          i += s.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    if (detail::word_char(c)) {
      std::string w;
      while (i < text.size() && detail::word_char(static_cast<unsigned char>(text[i])))
        w += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i++])));
      out.push_back(std::move(w));
    } else {
      out.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  return out;
}

/// Surface form -> entity name, matched on split words.
class Gazetteer {
 public:
  void add(const std::string& surface, const std::string& entity) {
    auto key = split_words(surface);
    if (key.empty()) throw Error("gazetteer: empty surface form for '" + entity + "'");
    max_len_ = std::max(max_len_, key.size());
    forms_[std::move(key)] = entity;
  }

  /// Longest match starting at words[i]; returns (length, entity) or (0, "").
  std::pair<std::size_t, std::string> longest_match(const std::vector<std::string>& words, std::size_t i) const {
    for (std::size_t len = std::min(max_len_, words.size() - i); len > 0; --len) {
      std::vector<std::string> key(words.begin() + static_cast<std::ptrdiff_t>(i),
                                   words.begin() + static_cast<std::ptrdiff_t>(i + len));
      auto it = forms_.find(key);
      if (it != forms_.end()) return {len, it->second};
    }
    return {0, {}};
  }

  std::size_t size() const { return forms_.size(); }

 private:
  std::map<std::vector<std::string>, std::string> forms_;
  std::size_t max_len_ = 0;
};

inline AnnotatedText from_words(std::vector<std::string> words, const Vocabulary& vocab, std::vector<Mention> mentions) {
  AnnotatedText at;
  at.words.emplace_back(special::kCls);
  for (auto& w : words) at.words.push_back(std::move(w));
  for (const auto& w : at.words) at.tokens.push_back(vocab.id(w));
  at.attention_mask.assign(at.words.size(), true);
  at.segments.assign(at.words.size(), 0);
  std::sort(mentions.begin(), mentions.end(), [](const Mention& a, const Mention& b) { return a.start < b.start; });
  at.mentions = std::move(mentions);
  at.validate();
  return at;
}

/// Splits, prepends [CLS] and links mentions by greedy longest match.
inline AnnotatedText tokenize(const std::string& text, const Vocabulary& vocab, const Gazetteer& gaz) {
  std::vector<std::string> words = split_words(text);
  std::vector<Mention> mentions;
  for (std::size_t i = 0; i < words.size();) {
    auto [len, entity] = gaz.longest_match(words, i);
    if (len == 0) {
      ++i;
      continue;
    }
    mentions.push_back({i + 1, i + 1 + len, entity});
    i += len;
  }
  return from_words(std::move(words), vocab, std::move(mentions));
}

/// Appends [PAD] up to n tokens; padded positions are masked out.
inline AnnotatedText pad_to(AnnotatedText at, std::size_t n, const Vocabulary& vocab) {
  while (at.size() < n) {
    at.words.emplace_back(special::kPad);
    at.tokens.push_back(vocab.pad());
    at.attention_mask.push_back(false);
    at.segments.push_back(0);
  }
  return at;
}

enum class MarkerTask { entity_typing, relation_clf };

/// entity_typing: [ENT] before targets[0]. relation_clf: [HD] before
/// targets[0] (head) and [TL] before targets[1] (tail).
inline AnnotatedText insert_markers(const AnnotatedText& at, const Vocabulary& vocab, MarkerTask task,
                                    const std::vector<Span>& targets) {
  for (TokenId t : at.tokens)
    if (vocab.is_marker(t)) throw Error("insert_markers: text already carries marker tokens");
  const std::size_t need = task == MarkerTask::entity_typing ? 1 : 2;
  if (targets.size() != need)
    throw Error("insert_markers: expected " + std::to_string(need) + " target span(s), got " + std::to_string(targets.size()));
  if (need == 2 && targets[0] == targets[1]) throw Error("insert_markers: head and tail spans coincide");

  std::vector<std::pair<std::size_t, TokenId>> inserts;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const Span& sp = targets[k];
    auto it = std::find_if(at.mentions.begin(), at.mentions.end(),
                           [&](const Mention& m) { return m.start == sp.start && m.end == sp.end; });
    if (it == at.mentions.end())
      throw Error("insert_markers: span (" + std::to_string(sp.start) + "," + std::to_string(sp.end) + ") is not a mention");
    const TokenId marker = task == MarkerTask::entity_typing ? vocab.ent() : (k == 0 ? vocab.hd() : vocab.tl());
    inserts.emplace_back(sp.start, marker);
  }
  std::sort(inserts.begin(), inserts.end(), [](auto& a, auto& b) { return a.first > b.first; });

  AnnotatedText out = at;
  for (const auto& [pos, marker] : inserts) {
    const auto off = static_cast<std::ptrdiff_t>(pos);
    out.words.insert(out.words.begin() + off, vocab.token(marker));
    out.tokens.insert(out.tokens.begin() + off, marker);
    out.attention_mask.insert(out.attention_mask.begin() + off, true);
    out.segments.insert(out.segments.begin() + off, out.segments[pos]);
    for (Mention& m : out.mentions)
      if (m.start >= pos) {
        ++m.start;
        ++m.end;
      }
  }
  out.validate();
  return out;
}

inline nlohmann::json to_json(const AnnotatedText& at) {
  nlohmann::json ms = nlohmann::json::array();
  for (const Mention& m : at.mentions) ms.push_back({{"start", m.start}, {"end", m.end}, {"entity", m.entity}});
  return {{"text", at.text()}, {"mentions", ms}};
}

/// Re-splits "text" and takes mentions verbatim (token indices count [CLS]).
inline AnnotatedText annotated_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  if (!j.contains("text") || !j["text"].is_string()) throw Error("annotated text record lacks a \"text\" string");
  std::vector<Mention> mentions;
  if (j.contains("mentions"))
    for (const auto& m : j["mentions"])
      mentions.push_back({m.at("start").get<std::size_t>(), m.at("end").get<std::size_t>(), m.at("entity").get<std::string>()});
  return from_words(split_words(j["text"].get<std::string>()), vocab, std::move(mentions));
}

/// One JSON object per nonblank line.
inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": " + e.what(), n);
    }
  }
  return out;
}

inline void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  for (const auto& r : records) out << r.dump() << '\n';
}

}  // namespace dkctx
