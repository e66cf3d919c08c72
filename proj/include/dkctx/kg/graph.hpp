// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dkctx/util/error.hpp"
#include "dkctx/util/hash.hpp"

namespace dkctx {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
using TripleId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;
  auto operator<=>(const Triple&) const = default;
};

/// String interning with dense ids assigned in first-seen order.
class Interner {
 public:
  std::uint32_t intern(std::string_view s) {
    auto it = index_.find(std::string(s));
    if (it != index_.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(names_.size());
    names_.emplace_back(s);
    index_.emplace(names_.back(), id);
    return id;
  }
  std::optional<std::uint32_t> find(std::string_view s) const {
    auto it = index_.find(std::string(s));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// Directed multi-relational graph with per-entity incidence indexes.
/// Identical triples are stored once; parallel edges with different
/// relations are distinct triples.
class KnowledgeGraph {
 public:
  EntityId add_entity(std::string_view name) {
    const EntityId id = entities_.intern(name);
    if (id == out_.size()) {
      out_.emplace_back();
      in_.emplace_back();
    }
    return id;
  }
  RelationId add_relation(std::string_view name) { return relations_.intern(name); }

  // Returns false when the triple already exists.
  bool add_triple(EntityId h, RelationId r, EntityId t) {
    if (h >= num_entities() || t >= num_entities() || r >= num_relations())
      throw Error("add_triple: id out of range");
    const Triple tr{h, r, t};
    if (!seen_.insert(tr).second) return false;
    const auto id = static_cast<TripleId>(triples_.size());
    triples_.push_back(tr);
    out_[h].push_back(id);
    in_[t].push_back(id);
    return true;
  }
  bool add_triple(std::string_view h, std::string_view r, std::string_view t) {
    const EntityId hid = add_entity(h);
    const RelationId rid = add_relation(r);
    const EntityId tid = add_entity(t);
    return add_triple(hid, rid, tid);
  }

  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }
  std::size_t num_triples() const { return triples_.size(); }

  const Triple& triple(TripleId id) const { return triples_.at(id); }
  const std::vector<Triple>& triples() const { return triples_; }
  const std::vector<TripleId>& out_triples(EntityId e) const { return out_.at(e); }
  const std::vector<TripleId>& in_triples(EntityId e) const { return in_.at(e); }
  bool contains(const Triple& t) const { return seen_.count(t) != 0; }
  std::optional<TripleId> find_triple(std::string_view h, std::string_view r, std::string_view t) const {
    auto hi = find_entity(h), ri = find_relation(r), ti = find_entity(t);
    if (!hi || !ri || !ti) return std::nullopt;
    for (TripleId id : out_[*hi])
      if (triples_[id].relation == *ri && triples_[id].tail == *ti) return id;
    return std::nullopt;
  }

  std::optional<EntityId> find_entity(std::string_view name) const { return entities_.find(name); }
  std::optional<RelationId> find_relation(std::string_view name) const { return relations_.find(name); }
  EntityId entity_id(std::string_view name) const {
    auto id = entities_.find(name);
    if (!id) throw Error("unknown entity '" + std::string(name) + "'");
    return *id;
  }
  RelationId relation_id(std::string_view name) const {
    auto id = relations_.find(name);
    if (!id) throw Error("unknown relation '" + std::string(name) + "'");
    return *id;
  }
  const std::string& entity_name(EntityId id) const { return entities_.name(id); }
  const std::string& relation_name(RelationId id) const { return relations_.name(id); }
  const std::vector<std::string>& entity_names() const { return entities_.names(); }
  const std::vector<std::string>& relation_names() const { return relations_.names(); }

  void require_entity(EntityId e) const {
    if (e >= num_entities()) throw Error("unknown entity id " + std::to_string(e));
  }

  /// Content hash over vocabularies and triples, in id order.
  std::string hash() const {
    Fnv1a h;
    h.update("kg\n");
    for (const auto& n : entities_.names()) h.update(n).update("\n");
    h.update("--\n");
    for (const auto& n : relations_.names()) h.update(n).update("\n");
    h.update("--\n");
    for (const Triple& t : triples_) h.update_u64(t.head).update_u64(t.relation).update_u64(t.tail);
    return h.hex();
  }

 private:
  Interner entities_;
  Interner relations_;
  std::vector<Triple> triples_;
  std::set<Triple> seen_;
  std::vector<std::vector<TripleId>> out_;
  std::vector<std::vector<TripleId>> in_;
};

struct LoadLineError {
  std::size_t line = 0;
  std::string message;
};

struct LoadReport {
  std::size_t lines = 0;
  std::size_t skipped = 0;  // blank and comment lines
  std::size_t entities = 0;
  std::size_t relations = 0;
  std::size_t triples = 0;
  std::size_t duplicates = 0;
  std::vector<LoadLineError> line_errors;

  nlohmann::json to_json() const {
    nlohmann::json errs = nlohmann::json::array();
    for (const auto& e : line_errors) errs.push_back({{"line", e.line}, {"message", e.message}});
    return {{"lines", lines},         {"skipped", skipped},     {"entities", entities},
            {"relations", relations}, {"triples", triples},     {"duplicates", duplicates},
            {"line_errors", errs}};
  }
};

struct LoadOptions {
  // Strict loading throws on the first malformed line; lenient loading
  // records it in the report and continues.
  bool strict = true;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Reads `head<TAB>relation<TAB>tail` lines. Blank lines and lines whose
/// first non-space character is '#' are skipped.
inline KnowledgeGraph parse_triples(std::istream& in, LoadReport* report = nullptr, LoadOptions opt = {}) {
  KnowledgeGraph kg;
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  rep = LoadReport{};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    ++rep.lines;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string_view t = detail::trim(line);
    if (t.empty() || t.front() == '#') {
      ++rep.skipped;
      continue;
    }
    std::vector<std::string_view> fields;
    std::string_view rest = line;
    while (true) {
      const auto pos = rest.find('\t');
      fields.push_back(rest.substr(0, pos));
      if (pos == std::string_view::npos) break;
      rest.remove_prefix(pos + 1);
    }
    std::string problem;
    if (fields.size() != 3) {
      problem = "expected 3 tab-separated fields, found " + std::to_string(fields.size());
    } else {
      for (auto& f : fields) f = detail::trim(f);
      if (fields[0].empty()) problem = "empty head entity";
      else if (fields[1].empty()) problem = "empty relation";
      else if (fields[2].empty()) problem = "empty tail entity";
    }
    if (!problem.empty()) {
      if (opt.strict) throw ParseError("malformed triple: " + problem, lineno);
      rep.line_errors.push_back({lineno, problem});
      continue;
    }
    if (!kg.add_triple(fields[0], fields[1], fields[2])) ++rep.duplicates;
  }
  rep.entities = kg.num_entities();
  rep.relations = kg.num_relations();
  rep.triples = kg.num_triples();
  return kg;
}

inline KnowledgeGraph load_triples(const std::string& path, LoadReport* report = nullptr, LoadOptions opt = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open triples file '" + path + "'");
  return parse_triples(in, report, opt);
}

inline KnowledgeGraph parse_triples_string(const std::string& text, LoadReport* report = nullptr) {
  std::istringstream in(text);
  return parse_triples(in, report);
}

inline void write_triples(std::ostream& os, const KnowledgeGraph& kg) {
  for (const Triple& t : kg.triples())
    os << kg.entity_name(t.head) << '\t' << kg.relation_name(t.relation) << '\t' << kg.entity_name(t.tail) << '\n';
}

inline void write_triples(const std::string& path, const KnowledgeGraph& kg) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write triples file '" + path + "'");
  write_triples(out, kg);
}

}  // namespace dkctx
