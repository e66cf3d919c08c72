// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkctx/kg/graph.hpp"
#include "dkctx/numerics/checkpoint.hpp"
#include "dkctx/numerics/ops.hpp"
#include "dkctx/numerics/optim.hpp"

namespace dkctx {

/// Fixed entity and relation vectors, indexed by graph id.
struct EmbeddingTable {
  std::size_t dim = 0;
  Tensor entity_vectors;    // [num_entities x dim]
  Tensor relation_vectors;  // [num_relations x dim]

  std::span<const double> entity(EntityId e) const { return entity_vectors.row_span(e); }
  std::span<const double> relation(RelationId r) const { return relation_vectors.row_span(r); }
  std::size_t num_entities() const { return entity_vectors.rows(); }
  std::size_t num_relations() const { return relation_vectors.rows(); }

  bool operator==(const EmbeddingTable&) const = default;
};

/// ||h + r - t||_2
inline double transe_distance(std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  if (h.size() != r.size() || h.size() != t.size())
    throw ShapeError("transe_distance: dimensions " + std::to_string(h.size()) + ", " + std::to_string(r.size()) +
                     ", " + std::to_string(t.size()) + " differ");
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = h[i] + r[i] - t[i];
    s += d * d;
  }
  return std::sqrt(s);
}

struct TransEConfig {
  std::size_t dim = 32;
  double margin = 1.0;
  // Applied to the batch-mean loss, so per-triple steps are lr / batch_size.
  double lr = 0.5;
  std::size_t epochs = 100;
  std::size_t neg_per_pos = 4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

struct TransEStats {
  std::vector<double> epoch_loss;  // mean hinge per (positive, negative) pair
};

/// Mean over pairs of max(0, margin + d(pos) - d(neg)), built on the tape
/// from the entity matrix E and relation matrix R.
inline Var transe_margin_loss(Var E, Var R, const std::vector<Triple>& pos, const std::vector<Triple>& neg,
                              double margin) {
  if (pos.size() != neg.size() || pos.empty()) throw Error("transe_margin_loss: need equal, nonempty pair lists");
  auto dist = [&](const std::vector<Triple>& ts) {
    std::vector<std::size_t> h, r, t;
    for (const Triple& x : ts) {
      h.push_back(x.head);
      r.push_back(x.relation);
      t.push_back(x.tail);
    }
    return row_norm(sub(add(gather_rows(E, h), gather_rows(R, r)), gather_rows(E, t)));
  };
  Tape& tape = *E.tape;
  Var m = tape.constant(Tensor(Shape{pos.size(), 1}, margin));
  return mean(relu(add(m, sub(dist(pos), dist(neg)))));
}

namespace detail {

inline void renormalize_rows(Tensor& t, double max_norm) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    auto row = t.row_span(i);
    const double n = l2_norm(row);
    if (n > max_norm)
      for (double& v : row) v *= max_norm / n;
  }
}

}  // namespace detail

/// Margin-ranking TransE with uniform head-or-tail corruption (filtered
/// against true triples) and plain SGD. Entity vectors are renormalized to
/// norm <= 1 after every epoch.
inline EmbeddingTable train_transe(const KnowledgeGraph& kg, const TransEConfig& cfg, TransEStats* stats = nullptr) {
  if (cfg.dim == 0) throw Error("train_transe: dim must be positive");
  if (cfg.epochs == 0) throw Error("train_transe: epochs must be positive");
  if (!(cfg.margin > 0.0)) throw Error("train_transe: margin must be positive");
  if (kg.num_triples() == 0) throw Error("train_transe: knowledge graph has no triples");
  if (cfg.neg_per_pos == 0 || cfg.batch_size == 0) throw Error("train_transe: neg_per_pos and batch_size must be positive");

  Rng init = Rng::substream(cfg.seed, "transe-init");
  Rng sampler = Rng::substream(cfg.seed, "transe-sampling");
  const double bound = 6.0 / std::sqrt(static_cast<double>(cfg.dim));
  ParamStore store;
  auto uniform = [&](std::size_t rows) {
    Tensor t = Tensor::zeros(rows, cfg.dim);
    for (double& v : t.values()) v = init.uniform(-bound, bound);
    for (std::size_t i = 0; i < rows; ++i) {
      auto row = t.row_span(i);
      const double n = l2_norm(row);
      for (double& v : row) v /= n;
    }
    return t;
  };
  store.add("entities", uniform(kg.num_entities()));
  store.add("relations", uniform(kg.num_relations()));

  const std::size_t n_ent = kg.num_entities();
  std::vector<TripleId> order(kg.num_triples());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<TripleId>(i);
  Sgd sgd(cfg.lr);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    sampler.shuffle(order);
    double loss_sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<Triple> pos, neg;
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) {
        const Triple& t = kg.triple(order[k]);
        for (std::size_t j = 0; j < cfg.neg_per_pos; ++j) {
          const bool corrupt_head = sampler.bernoulli(0.5);
          for (int attempt = 0; attempt < 16; ++attempt) {
            Triple c = t;
            (corrupt_head ? c.head : c.tail) = static_cast<EntityId>(sampler.below(n_ent));
            if (!kg.contains(c)) {
              pos.push_back(t);
              neg.push_back(c);
              break;
            }
          }
        }
      }
      if (pos.empty()) continue;
      store.zero_grad();
      Tape tape;
      Var loss = transe_margin_loss(tape.param(store, "entities"), tape.param(store, "relations"), pos, neg, cfg.margin);
      tape.backward(loss);
      sgd.step(store);
      loss_sum += loss.item() * static_cast<double>(pos.size());
      pairs += pos.size();
    }
    detail::renormalize_rows(store.get("entities").value, 1.0);
    if (stats) stats->epoch_loss.push_back(pairs ? loss_sum / static_cast<double>(pairs) : 0.0);
  }
  return EmbeddingTable{cfg.dim, store.get("entities").value, store.get("relations").value};
}

/// Mean 1-based rank of the true tail among all entities, ranking by
/// transe_distance (ties resolved in the triple's favor).
inline double mean_tail_rank(const EmbeddingTable& table, const KnowledgeGraph& kg) {
  if (kg.num_triples() == 0) throw Error("mean_tail_rank: no triples");
  double total = 0.0;
  for (const Triple& t : kg.triples()) {
    const double truth = transe_distance(table.entity(t.head), table.relation(t.relation), table.entity(t.tail));
    std::size_t better = 0;
    for (EntityId e = 0; e < table.num_entities(); ++e)
      if (transe_distance(table.entity(t.head), table.relation(t.relation), table.entity(e)) < truth) ++better;
    total += static_cast<double>(better + 1);
  }
  return total / static_cast<double>(kg.num_triples());
}

inline std::string vocab_hash(const KnowledgeGraph& kg) {
  Fnv1a h;
  for (const auto& n : kg.entity_names()) h.update(n).update("\n");
  h.update("--\n");
  for (const auto& n : kg.relation_names()) h.update(n).update("\n");
  return h.hex();
}

inline Checkpoint embeddings_checkpoint(const EmbeddingTable& table, const KnowledgeGraph& kg, std::uint64_t seed) {
  Checkpoint c;
  c.manifest = {{"kind", "transe"},
                {"dim", table.dim},
                {"seed", seed},
                {"vocab_hash", vocab_hash(kg)},
                {"kg_hash", kg.hash()}};
  for (EntityId e = 0; e < table.num_entities(); ++e) c.tensors.emplace("entity/" + kg.entity_name(e), table.entity_vectors.row_copy(e));
  for (RelationId r = 0; r < table.num_relations(); ++r)
    c.tensors.emplace("relation/" + kg.relation_name(r), table.relation_vectors.row_copy(r));
  return c;
}

inline void save_embeddings(const std::string& path, const EmbeddingTable& table, const KnowledgeGraph& kg,
                            std::uint64_t seed) {
  save_checkpoint(path, embeddings_checkpoint(table, kg, seed));
}

/// Rebuilds a table aligned to kg's ids. expected_dim == 0 accepts any dim.
inline EmbeddingTable embeddings_from_checkpoint(const Checkpoint& c, const KnowledgeGraph& kg, std::size_t expected_dim = 0) {
  if (c.manifest.value("kind", "") != "transe") throw ManifestError("checkpoint is not a TransE embedding table");
  const std::size_t dim = c.manifest.at("dim").get<std::size_t>();
  if (expected_dim != 0 && dim != expected_dim)
    throw ManifestError("embedding dim mismatch: checkpoint has " + std::to_string(dim) + ", config expects " +
                        std::to_string(expected_dim));
  EmbeddingTable table{dim, Tensor::zeros(kg.num_entities(), dim), Tensor::zeros(kg.num_relations(), dim)};
  auto fill = [&](const std::string& key, Tensor& dst, std::size_t row) {
    auto it = c.tensors.find(key);
    if (it == c.tensors.end()) throw Error("embedding checkpoint is missing id '" + key + "'");
    if (it->second.size() != dim)
      throw ShapeError("embedding '" + key + "' has " + std::to_string(it->second.size()) + " values, expected " +
                       std::to_string(dim));
    std::copy(it->second.values().begin(), it->second.values().end(), dst.row_span(row).begin());
  };
  for (EntityId e = 0; e < kg.num_entities(); ++e) fill("entity/" + kg.entity_name(e), table.entity_vectors, e);
  for (RelationId r = 0; r < kg.num_relations(); ++r) fill("relation/" + kg.relation_name(r), table.relation_vectors, r);
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path, const KnowledgeGraph& kg, std::size_t expected_dim = 0) {
  return embeddings_from_checkpoint(load_checkpoint(path), kg, expected_dim);
}

}  // namespace dkctx
