// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dkctx/sgnn/sgnn.hpp"

namespace dkctx {

/// Relevant triples for one (sentence, mention) pair.
struct SelectionGold {
  std::string sentence_id;
  std::string mention_entity;
  std::vector<TripleId> relevant;

  static SelectionGold from_json(const nlohmann::json& j) {
    return {j.at("sentence_id").get<std::string>(), j.at("mention_entity").get<std::string>(),
            j.at("relevant_triples").get<std::vector<TripleId>>()};
  }
  nlohmann::json to_json() const {
    return {{"sentence_id", sentence_id}, {"mention_entity", mention_entity}, {"relevant_triples", relevant}};
  }
};

struct ScoredMention {
  std::string sentence_id;
  std::string mention_entity;
  std::vector<TripleScore> scores;
};

struct SelectionMetrics {
  double threshold = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;

  nlohmann::json to_json() const {
    return {{"threshold", threshold}, {"tp", tp}, {"fp", fp}, {"fn", fn},
            {"precision", precision}, {"recall", recall}, {"f1", f1}};
  }
};

namespace detail {

inline std::map<std::pair<std::string, std::string>, const ScoredMention*> index_scored(const std::vector<ScoredMention>& scored) {
  std::map<std::pair<std::string, std::string>, const ScoredMention*> idx;
  for (const auto& s : scored) idx[{s.sentence_id, s.mention_entity}] = &s;
  return idx;
}

}  // namespace detail

/// A triple is predicted relevant when its weight >= threshold. Counts are
/// pooled over all gold (sentence, mention) pairs (micro average).
inline SelectionMetrics eval_selection(const std::vector<ScoredMention>& scored, const std::vector<SelectionGold>& gold,
                                       double threshold) {
  auto idx = detail::index_scored(scored);
  SelectionMetrics m;
  m.threshold = threshold;
  std::string missing;
  for (const SelectionGold& g : gold) {
    auto it = idx.find({g.sentence_id, g.mention_entity});
    if (it == idx.end()) {
      missing += " " + g.sentence_id + "/" + g.mention_entity + "(unscored)";
      continue;
    }
    std::set<TripleId> relevant(g.relevant.begin(), g.relevant.end()), seen;
    for (const TripleScore& s : it->second->scores) {
      if (!seen.insert(s.triple).second) continue;  // self-loops are listed twice
      const bool pred = s.weight >= threshold, rel = relevant.count(s.triple) != 0;
      m.tp += pred && rel;
      m.fp += pred && !rel;
      m.fn += !pred && rel;
    }
    for (TripleId t : relevant)
      if (!seen.count(t)) missing += " " + g.sentence_id + "/" + g.mention_entity + ":" + std::to_string(t);
  }
  if (!missing.empty()) throw Error("eval_selection: gold triples missing from scores:" + missing);
  m.precision = m.tp + m.fp ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
  m.recall = m.tp + m.fn ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

struct ThresholdSweep {
  SelectionMetrics best;
  std::vector<SelectionMetrics> curve;

  nlohmann::json to_json() const {
    nlohmann::json c = nlohmann::json::array();
    for (const auto& m : curve) c.push_back({{"threshold", m.threshold}, {"f1", m.f1}});
    return {{"best", best.to_json()}, {"curve", c}};
  }
};

/// Argmax-F1 threshold over a sorted grid; ties go to the smallest value.
inline ThresholdSweep sweep_threshold(const std::vector<ScoredMention>& scored, const std::vector<SelectionGold>& gold,
                                      const std::vector<double>& grid) {
  if (grid.empty()) throw Error("sweep_threshold: empty grid");
  if (!std::is_sorted(grid.begin(), grid.end())) throw Error("sweep_threshold: grid must be sorted");
  ThresholdSweep out;
  for (double th : grid) {
    out.curve.push_back(eval_selection(scored, gold, th));
    if (out.curve.size() == 1 || out.curve.back().f1 > out.best.f1) out.best = out.curve.back();
  }
  return out;
}

inline std::vector<double> default_threshold_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 100; ++i) g.push_back(i / 100.0);
  return g;
}

}  // namespace dkctx
