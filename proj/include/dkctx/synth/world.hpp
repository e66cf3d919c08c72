// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkctx/kg/graph.hpp"
#include "dkctx/text/annotated.hpp"
#include "dkctx/util/rng.hpp"

namespace dkctx {

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t countries = 8;
  std::size_t cities_per_country = 3;
  std::size_t orgs = 24;
  std::size_t fields = 8;
  std::size_t persons = 134;
  std::size_t sentences = 500;
  std::size_t relation_examples = 320;
  double moved_prob = 0.6;     // lives somewhere other than the birth country
  double employed_prob = 0.7;
  double friend_prob = 0.4;
  double dev_fraction = 0.15;
  double test_fraction = 0.15;

  nlohmann::json to_json() const {
    return {{"seed", seed},           {"countries", countries}, {"cities_per_country", cities_per_country},
            {"orgs", orgs},           {"fields", fields},       {"persons", persons},
            {"sentences", sentences}, {"relation_examples", relation_examples}};
  }
};

struct SyntheticWorld {
  KnowledgeGraph kg;
  Vocabulary vocab;
  std::vector<nlohmann::json> corpus;
  std::vector<nlohmann::json> selection_gold;
  std::vector<nlohmann::json> relation_gold;

  /// triples.tsv, corpus.jsonl, selection_gold.jsonl, relation_gold.jsonl, vocab.txt
  void write(const std::string& dir) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create '" + dir + "': " + ec.message());
    write_triples(dir + "/triples.tsv", kg);
    write_jsonl(dir + "/corpus.jsonl", corpus);
    write_jsonl(dir + "/selection_gold.jsonl", selection_gold);
    write_jsonl(dir + "/relation_gold.jsonl", relation_gold);
    vocab.save(dir + "/vocab.txt");
  }
};

namespace synth {

inline std::string name(const char* kind, std::size_t i, int width) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s_%0*zu", kind, width, i);
  return buf;
}

inline const std::map<std::string, std::vector<std::string>>& phrases() {
  static const std::map<std::string, std::vector<std::string>> p{
      {"born_in", {"was", "born", "in"}},
      {"lives_in", {"lives", "in"}},
      {"works_for", {"works", "for"}},
      {"studied", {"studied"}},
      {"friend_of", {"is", "a", "friend", "of"}},
      {"part_of", {"is", "part", "of"}},
      {"located_in", {"is", "a", "city", "in"}},
      {"capital_of", {"is", "the", "capital", "of"}},
      {"headquartered_in", {"is", "based", "in"}},
      {"field_of", {"is", "active", "in"}},
  };
  return p;
}

inline const std::vector<std::string>& extra_words() {
  static const std::vector<std::string> w{"and", "both", "work", "for", "gave", "a", "talk", "is", "famous", "."};
  return w;
}

/// Words plus mentions; mention spans count the [CLS] slot.
struct Sentence {
  std::vector<std::string> words;
  nlohmann::json mentions = nlohmann::json::array();

  void entity(const std::string& e, const std::vector<std::string>& types) {
    mentions.push_back({{"start", words.size() + 1}, {"end", words.size() + 2}, {"entity", e}, {"types", types}});
    words.push_back(e);
  }
  void text(const std::vector<std::string>& ws) { words.insert(words.end(), ws.begin(), ws.end()); }
  std::string joined() const {
    std::string s;
    for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
    return s;
  }
};

}  // namespace synth

/// Seeded toy world: countries, cities, organisations, fields and people,
/// a templated corpus whose sentences each state one to three facts, gold
/// relevant triples per mention, and relation examples with neutral text
/// where some labels only follow from a two-step path.
inline SyntheticWorld generate_world(const SynthConfig& cfg) {
  if (cfg.countries < 2 || cfg.cities_per_country < 2 || cfg.orgs < 2 || cfg.fields < 1 || cfg.persons < 4)
    throw Error("gen_synth: world too small");
  Rng rng = Rng::substream(cfg.seed, "kg-gen");
  SyntheticWorld w;
  KnowledgeGraph& kg = w.kg;

  std::vector<std::string> countries, cities, orgs, fields, persons;
  std::map<std::string, std::vector<std::string>> types;
  for (std::size_t i = 0; i < cfg.countries; ++i) countries.push_back(synth::name("country", i, 2));
  for (std::size_t i = 0; i < cfg.countries * cfg.cities_per_country; ++i) cities.push_back(synth::name("city", i, 2));
  for (std::size_t i = 0; i < cfg.orgs; ++i) orgs.push_back(synth::name("org", i, 2));
  for (std::size_t i = 0; i < cfg.fields; ++i) fields.push_back(synth::name("field", i, 2));
  for (std::size_t i = 0; i < cfg.persons; ++i) persons.push_back(synth::name("person", i, 3));
  const std::vector<std::string> regions{"region_home", "region_abroad"};
  for (const auto& e : countries) types[e] = {"country"};
  for (const auto& e : regions) types[e] = {"region"};
  for (const auto& e : cities) types[e] = {"city"};
  for (const auto& e : orgs) types[e] = {"organization"};
  for (const auto& e : fields) types[e] = {"field"};
  for (const auto& e : persons) types[e] = {"person"};

  std::map<std::string, std::string> country_of, hq_of;
  for (std::size_t i = 0; i < countries.size(); ++i) kg.add_triple(countries[i], "part_of", regions[i < countries.size() / 2 ? 0 : 1]);
  for (std::size_t i = 0; i < cities.size(); ++i) {
    const std::string& c = countries[i / cfg.cities_per_country];
    country_of[cities[i]] = c;
    kg.add_triple(cities[i], "located_in", c);
    if (i % cfg.cities_per_country == 0) {
      kg.add_triple(cities[i], "capital_of", c);
      types[cities[i]].push_back("capital");
    }
  }
  for (const auto& o : orgs) {
    hq_of[o] = cities[rng.below(cities.size())];
    kg.add_triple(o, "headquartered_in", hq_of[o]);
    kg.add_triple(o, "field_of", fields[rng.below(fields.size())]);
  }
  std::map<std::string, std::string> born, lives, employer;
  // People are born in the first half of the countries; movers settle in
  // the second half, the rest move within their birth country.
  const std::size_t home_cities = (cfg.countries / 2) * cfg.cities_per_country;
  for (const auto& p : persons) {
    born[p] = cities[rng.below(home_cities)];
    std::string home;
    if (rng.bernoulli(cfg.moved_prob)) {
      home = cities[home_cities + rng.below(cities.size() - home_cities)];
      types[p].push_back("expatriate");
    } else {
      do home = cities[rng.below(cities.size())];
      while (country_of[home] != country_of[born[p]] || home == born[p]);
    }
    lives[p] = home;
    kg.add_triple(p, "born_in", born[p]);
    kg.add_triple(p, "lives_in", home);
    if (rng.bernoulli(cfg.employed_prob)) {
      employer[p] = orgs[rng.below(orgs.size())];
      kg.add_triple(p, "works_for", employer[p]);
      types[p].push_back("employee");
    }
    kg.add_triple(p, "studied", fields[rng.below(fields.size())]);
  }
  for (std::size_t i = 0; i < persons.size(); ++i) {
    if (rng.bernoulli(cfg.friend_prob)) {
      std::size_t j = rng.below(persons.size() - 1);
      if (j >= i) ++j;
      kg.add_triple(persons[i], "friend_of", persons[j]);
    }
  }
  for (auto& [e, ts] : types) std::sort(ts.begin(), ts.end());

  for (const auto& [r, ws] : synth::phrases())
    for (const auto& x : ws) w.vocab.add(x);
  for (const auto& x : synth::extra_words()) w.vocab.add(x);

  Rng text_rng = Rng::substream(cfg.seed, "corpus");
  auto split_of = [&](Rng& r) {
    const double u = r.uniform(0.0, 1.0);
    return u < cfg.test_fraction ? "test" : (u < cfg.test_fraction + cfg.dev_fraction ? "dev" : "train");
  };

  std::map<std::string, std::vector<std::string>> staff;
  for (const auto& [p, o] : employer) staff[o].push_back(p);
  std::vector<std::string> busy_orgs;
  for (const auto& [o, ps] : staff)
    if (ps.size() >= 2) busy_orgs.push_back(o);

  for (std::size_t n = 0; n < cfg.sentences; ++n) {
    const std::string id = synth::name("s", n, 4);
    synth::Sentence s;
    std::vector<std::pair<std::string, std::vector<TripleId>>> gold;
    const double u = text_rng.uniform(0.0, 1.0);
    if (u < 0.08) {
      const std::string& p = persons[text_rng.below(persons.size())];
      s.entity(p, types[p]);
      s.text({"gave", "a", "talk", "."});
    } else if (u < 0.18 && !busy_orgs.empty()) {
      const std::string& o = busy_orgs[text_rng.below(busy_orgs.size())];
      auto pick = text_rng.sample_indices(staff[o].size(), 2);
      const std::string &a = staff[o][pick[0]], &b = staff[o][pick[1]];
      s.entity(a, types[a]);
      s.text({"and"});
      s.entity(b, types[b]);
      s.text({"both", "work", "for"});
      s.entity(o, types[o]);
      s.text({"."});
      const TripleId ta = *kg.find_triple(a, "works_for", o), tb = *kg.find_triple(b, "works_for", o);
      gold = {{a, {ta}}, {b, {tb}}, {o, {std::min(ta, tb), std::max(ta, tb)}}};
    } else {
      const TripleId tid = static_cast<TripleId>(text_rng.below(kg.num_triples()));
      const Triple& t = kg.triple(tid);
      const std::string &h = kg.entity_name(t.head), &tl = kg.entity_name(t.tail), &r = kg.relation_name(t.relation);
      s.entity(h, types[h]);
      s.text(synth::phrases().at(r));
      s.entity(tl, types[tl]);
      s.text({"."});
      gold = {{h, {tid}}, {tl, {tid}}};
    }
    const std::string split = split_of(text_rng);
    w.corpus.push_back({{"id", id}, {"split", split}, {"text", s.joined()}, {"mentions", s.mentions}});
    for (const auto& [e, ts] : gold)
      w.selection_gold.push_back({{"sentence_id", id}, {"split", split}, {"mention_entity", e}, {"relevant_triples", ts}});
  }

  // Relation examples: neutral "X and Y ." text, label read off the graph.
  struct Cand {
    std::string head, tail, label;
    bool two_hop;
  };
  std::vector<Cand> direct, composed;
  for (const auto& p : persons) {
    direct.push_back({p, born[p], "born_in", false});
    if (employer.count(p)) direct.push_back({p, employer[p], "works_for", false});
    // residence labels only for movers, so every pair has one reading
    if (country_of[born[p]] != country_of[lives[p]]) {
      direct.push_back({p, lives[p], "lives_in", false});
      composed.push_back({p, country_of[born[p]], "born_country", true});
      composed.push_back({p, country_of[lives[p]], "residence_country", true});
    }
  }
  Rng rel_rng = Rng::substream(cfg.seed, "relation-examples");
  rel_rng.shuffle(direct);
  rel_rng.shuffle(composed);
  const std::size_t n_comp = std::min(composed.size(), cfg.relation_examples / 2);
  const std::size_t n_direct = std::min(direct.size(), cfg.relation_examples - n_comp);
  std::vector<Cand> chosen(composed.begin(), composed.begin() + static_cast<std::ptrdiff_t>(n_comp));
  chosen.insert(chosen.end(), direct.begin(), direct.begin() + static_cast<std::ptrdiff_t>(n_direct));
  rel_rng.shuffle(chosen);
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const Cand& c = chosen[i];
    synth::Sentence s;
    s.entity(c.head, types[c.head]);
    s.text({"and"});
    s.entity(c.tail, types[c.tail]);
    s.text({"."});
    w.relation_gold.push_back({{"id", synth::name("r", i, 4)},
                               {"split", split_of(rel_rng)},
                               {"text", s.joined()},
                               {"mentions", s.mentions},
                               {"head", {{"start", 1}, {"end", 2}}},
                               {"tail", {{"start", s.words.size() - 1}, {"end", s.words.size()}}},
                               {"label", c.label},
                               {"two_hop", c.two_hop}});
  }
  return w;
}

}  // namespace dkctx
