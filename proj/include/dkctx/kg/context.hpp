// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "dkctx/kg/graph.hpp"
#include "dkctx/util/rng.hpp"

namespace dkctx {

/// Orientation of a triple relative to the entity whose neighbor list holds
/// it: (n, r, e) is incoming to e, (e, r, n) is outgoing from e.
enum class Direction { incoming, outgoing };

inline const char* to_string(Direction d) { return d == Direction::incoming ? "incoming" : "outgoing"; }

struct Neighbor {
  EntityId neighbor = 0;
  RelationId relation = 0;
  Direction direction = Direction::incoming;
  TripleId triple = 0;
  bool operator==(const Neighbor&) const = default;
};

/// K-hop neighborhood of a mentioned entity: hop rings, the induced triple
/// set, and per-entity neighbor lists over that triple set.
struct RawContext {
  EntityId center = 0;
  std::size_t hops = 0;
  std::vector<std::vector<EntityId>> hop_sets;  // each sorted ascending
  std::vector<TripleId> context_triples;        // sorted ascending
  std::map<EntityId, std::vector<Neighbor>> neighbor_lists;

  /// Union of all hop sets, sorted.
  std::vector<EntityId> entities() const {
    std::vector<EntityId> all;
    for (const auto& h : hop_sets) all.insert(all.end(), h.begin(), h.end());
    std::sort(all.begin(), all.end());
    return all;
  }
  const std::vector<Neighbor>& neighbors_of(EntityId e) const {
    static const std::vector<Neighbor> none;
    auto it = neighbor_lists.find(e);
    return it == neighbor_lists.end() ? none : it->second;
  }
};

struct HopOptions {
  // Each hop ring is uniformly downsampled to at most this many entities;
  // 0 disables the cap. Dropped entities are excluded from later rings too,
  // so ring i still only holds entities exactly i steps away.
  std::size_t max_neighbors_per_hop = 64;
  std::uint64_t seed = 0;

  static HopOptions uncapped() { return HopOptions{0, 0}; }
};

/// Hop rings E^0..E^K around m, following edges in either direction.
inline std::vector<std::vector<EntityId>> hop_sets(const KnowledgeGraph& kg, EntityId m, std::size_t K,
                                                   const HopOptions& opt = {}) {
  kg.require_entity(m);
  std::vector<char> visited(kg.num_entities(), 0);
  std::vector<std::vector<EntityId>> rings;
  rings.push_back({m});
  visited[m] = 1;
  for (std::size_t i = 1; i <= K; ++i) {
    std::vector<EntityId> next;
    for (EntityId e : rings.back()) {
      for (TripleId tid : kg.out_triples(e)) {
        const EntityId t = kg.triple(tid).tail;
        if (!visited[t]) {
          visited[t] = 1;
          next.push_back(t);
        }
      }
      for (TripleId tid : kg.in_triples(e)) {
        const EntityId h = kg.triple(tid).head;
        if (!visited[h]) {
          visited[h] = 1;
          next.push_back(h);
        }
      }
    }
    std::sort(next.begin(), next.end());
    if (opt.max_neighbors_per_hop > 0 && next.size() > opt.max_neighbors_per_hop) {
      Rng rng(splitmix64(opt.seed ^ (static_cast<std::uint64_t>(m) << 8) ^ i));
      const auto keep = rng.sample_indices(next.size(), opt.max_neighbors_per_hop);
      std::vector<EntityId> kept;
      kept.reserve(keep.size());
      for (std::size_t k : keep) kept.push_back(next[k]);
      next = std::move(kept);
    }
    rings.push_back(std::move(next));
  }
  return rings;
}

/// Every triple of the graph with both endpoints inside the hop union,
/// plus the neighbor lists derived from those triples.
inline RawContext raw_context(const KnowledgeGraph& kg, EntityId m, std::size_t K, const HopOptions& opt = {}) {
  RawContext ctx;
  ctx.center = m;
  ctx.hops = K;
  ctx.hop_sets = hop_sets(kg, m, K, opt);
  std::vector<char> inside(kg.num_entities(), 0);
  for (const auto& ring : ctx.hop_sets)
    for (EntityId e : ring) inside[e] = 1;
  for (const auto& ring : ctx.hop_sets)
    for (EntityId e : ring)
      for (TripleId tid : kg.out_triples(e))
        if (inside[kg.triple(tid).tail]) ctx.context_triples.push_back(tid);
  std::sort(ctx.context_triples.begin(), ctx.context_triples.end());
  for (TripleId tid : ctx.context_triples) {
    const Triple& t = kg.triple(tid);
    ctx.neighbor_lists[t.tail].push_back({t.head, t.relation, Direction::incoming, tid});
    ctx.neighbor_lists[t.head].push_back({t.tail, t.relation, Direction::outgoing, tid});
  }
  return ctx;
}

}  // namespace dkctx
