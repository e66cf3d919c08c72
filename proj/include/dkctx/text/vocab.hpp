// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dkctx/util/error.hpp"
#include "dkctx/util/hash.hpp"

namespace dkctx {

using TokenId = std::uint32_t;

namespace special {
inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kUnk = "[UNK]";
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kMask = "[MASK]";
inline constexpr std::string_view kEnt = "[ENT]";
inline constexpr std::string_view kHd = "[HD]";
inline constexpr std::string_view kTl = "[TL]";
inline constexpr std::array<std::string_view, 8> kAll = {kPad, kUnk, kCls, kSep, kMask, kEnt, kHd, kTl};
}  // namespace special

/// Token <-> id map with dense ids. Reserved tokens are present exactly once;
/// a freshly constructed vocabulary holds them at ids 0..7.
class Vocabulary {
 public:
  Vocabulary() {
    for (auto s : special::kAll) add(s);
    resolve_reserved();
  }

  /// Ids follow line order. Every reserved token must appear exactly once.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v(Empty{});
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].empty()) throw ParseError("vocabulary: empty token", i + 1);
      if (v.index_.count(tokens[i])) throw ParseError("vocabulary: duplicate token '" + tokens[i] + "'", i + 1);
      v.add(tokens[i]);
    }
    v.resolve_reserved();
    return v;
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open vocabulary '" + path + "'");
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(line);
    }
    return from_tokens(tokens);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write vocabulary '" + path + "'");
    for (const auto& t : tokens_) out << t << '\n';
  }

  TokenId add(std::string_view token) {
    auto it = index_.find(std::string(token));
    if (it != index_.end()) return it->second;
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.emplace_back(token);
    index_.emplace(tokens_.back(), id);
    return id;
  }

  bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }
  TokenId id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? unk_ : it->second;
  }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenId pad() const { return pad_; }
  TokenId unk() const { return unk_; }
  TokenId cls() const { return cls_; }
  TokenId sep() const { return sep_; }
  TokenId mask() const { return mask_; }
  TokenId ent() const { return ent_; }
  TokenId hd() const { return hd_; }
  TokenId tl() const { return tl_; }
  bool is_special(TokenId t) const {
    return t == pad_ || t == unk_ || t == cls_ || t == sep_ || t == mask_ || t == ent_ || t == hd_ || t == tl_;
  }
  bool is_marker(TokenId t) const { return t == ent_ || t == hd_ || t == tl_; }

  std::string hash() const {
    Fnv1a h;
    for (const auto& t : tokens_) h.update(t).update("\n");
    return h.hex();
  }

 private:
  struct Empty {};
  explicit Vocabulary(Empty) {}

  void resolve_reserved() {
    auto need = [&](std::string_view s) {
      auto it = index_.find(std::string(s));
      if (it == index_.end()) throw Error("vocabulary is missing reserved token " + std::string(s));
      return it->second;
    };
    pad_ = need(special::kPad);
    unk_ = need(special::kUnk);
    cls_ = need(special::kCls);
    sep_ = need(special::kSep);
    mask_ = need(special::kMask);
    ent_ = need(special::kEnt);
    hd_ = need(special::kHd);
    tl_ = need(special::kTl);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId pad_ = 0, unk_ = 0, cls_ = 0, sep_ = 0, mask_ = 0, ent_ = 0, hd_ = 0, tl_ = 0;
};

}  // namespace dkctx
