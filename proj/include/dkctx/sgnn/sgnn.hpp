// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dkctx/embed/transe.hpp"
#include "dkctx/kg/context.hpp"
#include "dkctx/numerics/ops.hpp"

namespace dkctx {

enum class NeighborAttention { semantic, mean_pool };

inline const char* to_string(NeighborAttention a) { return a == NeighborAttention::semantic ? "semantic" : "mean_pool"; }
inline NeighborAttention parse_neighbor_attention(const std::string& s) {
  if (s == "semantic") return NeighborAttention::semantic;
  if (s == "mean_pool" || s == "mean") return NeighborAttention::mean_pool;
  throw Error("unknown attention mode '" + s + "' (expected semantic or mean_pool)");
}

struct SGnnConfig {
  std::size_t kg_dim = 32;    // d_k
  std::size_t text_dim = 128; // d_w
  std::size_t attn_dim = 0;   // d_a, 0 means d_k
  std::size_t layers = 2;     // I, kept equal to the hop radius K
  NeighborAttention attention = NeighborAttention::semantic;
  bool scaled_logits = false;
  bool center_residual = false;

  std::size_t da() const { return attn_dim == 0 ? kg_dim : attn_dim; }

  void validate() const {
    if (kg_dim == 0 || text_dim == 0) throw Error("sgnn: dimensions must be positive");
    if (layers == 0) throw Error("sgnn: at least one layer required");
  }

  nlohmann::json to_json() const {
    return {{"kg_dim", kg_dim}, {"text_dim", text_dim}, {"attn_dim", da()}, {"layers", layers},
            {"attention", to_string(attention)}, {"scaled_logits", scaled_logits}, {"center_residual", center_residual}};
  }
};

namespace sgnn {

inline void check_len(std::span<const double> v, std::size_t n, const char* what) {
  if (v.size() != n)
    throw ShapeError(std::string("sgnn: ") + what + " has dim " + std::to_string(v.size()) + ", expected " + std::to_string(n));
}

/// [n_static +- r_static ; n_prev] . W  (+ for incoming, - for outgoing)
inline std::vector<double> neighbor_message(const Tensor& W, std::span<const double> n_static, std::span<const double> r_static,
                                            std::span<const double> n_prev, Direction dir) {
  const std::size_t dk = W.cols();
  if (W.rows() != 2 * dk) throw ShapeError("sgnn: message weight must be [2d x d], got " + shape_str(W.shape()));
  check_len(n_static, dk, "neighbor vector");
  check_len(r_static, dk, "relation vector");
  check_len(n_prev, dk, "previous neighbor state");
  const double sign = dir == Direction::incoming ? 1.0 : -1.0;
  std::vector<double> x(2 * dk);
  for (std::size_t i = 0; i < dk; ++i) {
    x[i] = n_static[i] + sign * r_static[i];
    x[dk + i] = n_prev[i];
  }
  return kernels::matmul(Tensor::row(x), W).values();
}

/// tanh(s . Wq + bq)
inline std::vector<double> query(const Tensor& Wq, const Tensor& bq, std::span<const double> s) {
  check_len(s, Wq.rows(), "sentence vector");
  return kernels::tanh(kernels::add(kernels::matmul(Tensor::row({s.begin(), s.end()}), Wq), bq)).values();
}

/// (+-r) . Wk + bk
inline std::vector<double> key(const Tensor& Wk, const Tensor& bk, std::span<const double> r, Direction dir) {
  check_len(r, Wk.rows(), "relation vector");
  std::vector<double> x(r.begin(), r.end());
  if (dir == Direction::outgoing)
    for (double& v : x) v = -v;
  return kernels::add(kernels::matmul(Tensor::row(x), Wk), bk).values();
}

struct Attended {
  std::vector<double> output;
  std::vector<double> weights;
};

/// sum_j softmax(k_j . q) m_j
inline Attended attend(const std::vector<std::vector<double>>& messages, const std::vector<std::vector<double>>& keys,
                       std::span<const double> q, double logit_scale = 1.0) {
  if (messages.empty()) throw Error("sgnn attend: empty neighbor list");
  if (messages.size() != keys.size()) throw ShapeError("sgnn attend: message and key counts differ");
  Tensor logits = Tensor::zeros(1, keys.size());
  for (std::size_t j = 0; j < keys.size(); ++j) {
    check_len(keys[j], q.size(), "key");
    double dot = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) dot += keys[j][c] * q[c];
    logits(0, j) = dot * logit_scale;
  }
  Attended out;
  out.weights = kernels::softmax_rows(logits).values();
  out.output.assign(messages[0].size(), 0.0);
  for (std::size_t j = 0; j < messages.size(); ++j) {
    check_len(messages[j], out.output.size(), "message");
    for (std::size_t c = 0; c < out.output.size(); ++c) out.output[c] += out.weights[j] * messages[j][c];
  }
  return out;
}

}  // namespace sgnn

struct ContextEncoding {
  std::vector<Var> mentions;      // one [1 x d_k] row per context
  std::vector<bool> isolated;     // center had no incident context triple
  // [context][layer]: per-edge weights and the entity each edge feeds
  std::vector<std::vector<Tensor>> weights;
  std::vector<std::vector<std::size_t>> edge_targets;

  Var stacked() const {
    if (mentions.empty()) throw Error("context encoding is empty");
    return mentions.size() == 1 ? mentions[0] : concat_rows(mentions);
  }
};

struct TripleScore {
  TripleId triple = 0;
  EntityId neighbor = 0;
  RelationId relation = 0;
  Direction direction = Direction::incoming;
  double weight = 0.0;
};

struct TripleRanking {
  EntityId center = 0;
  std::vector<TripleScore> scores;  // weight descending
  bool warning = false;
  std::string message;

  nlohmann::json to_json(const KnowledgeGraph& kg) const {
    nlohmann::json rows = nlohmann::json::array();
    for (const TripleScore& s : scores) {
      const Triple& t = kg.triple(s.triple);
      rows.push_back({{"importance_pct", 100.0 * s.weight},
                      {"weight", s.weight},
                      {"neighbor", kg.entity_name(s.neighbor)},
                      {"relation", kg.relation_name(s.relation)},
                      {"direction", to_string(s.direction)},
                      {"triple", {kg.entity_name(t.head), kg.relation_name(t.relation), kg.entity_name(t.tail)}}});
    }
    nlohmann::json j{{"center", kg.entity_name(center)}, {"scores", rows}, {"warning", warning}};
    if (!message.empty()) j["message"] = message;
    return j;
  }

  /// Aligned columns: importance %, neighbor, relation, direction.
  std::string to_table(const KnowledgeGraph& kg) const {
    std::size_t wn = 8, wr = 8;
    for (const TripleScore& s : scores) {
      wn = std::max(wn, kg.entity_name(s.neighbor).size());
      wr = std::max(wr, kg.relation_name(s.relation).size());
    }
    std::ostringstream out;
    out << "center: " << kg.entity_name(center) << '\n';
    if (warning) out << "warning: " << message << '\n';
    out << std::left << std::setw(8) << "import." << "  " << std::setw(static_cast<int>(wn)) << "neighbor" << "  "
        << std::setw(static_cast<int>(wr)) << "relation" << "  direction\n";
    for (const TripleScore& s : scores) {
      std::ostringstream pct;
      pct << std::fixed << std::setprecision(1) << 100.0 * s.weight << '%';
      out << std::right << std::setw(7) << pct.str() << "   " << std::left << std::setw(static_cast<int>(wn))
          << kg.entity_name(s.neighbor) << "  " << std::setw(static_cast<int>(wr)) << kg.relation_name(s.relation) << "  "
          << to_string(s.direction) << '\n';
    }
    return out.str();
  }
};

/// Stack of neighbor-aggregation layers whose attention over a node's
/// incident triples is queried by the sentence vector.
class SGnn {
 public:
  SGnn() = default;
  SGnn(SGnnConfig cfg, std::string prefix = "sgnn") : cfg_(cfg), prefix_(std::move(prefix)) { cfg_.validate(); }

  const SGnnConfig& config() const { return cfg_; }
  std::string name(std::size_t layer, const char* p) const { return prefix_ + "/layer" + std::to_string(layer) + "/" + p; }

  void init(ParamStore& s, Rng& rng) const {
    const std::size_t dk = cfg_.kg_dim, dw = cfg_.text_dim, da = cfg_.da();
    for (std::size_t i = 0; i < cfg_.layers; ++i) {
      s.add_uniform(name(i, "W"), {2 * dk, dk}, 2 * dk, rng);
      s.add_uniform(name(i, "Wq"), {dw, da}, dw, rng);
      s.add_uniform(name(i, "bq"), {1, da}, dw, rng);
      s.add_uniform(name(i, "Wk"), {dk, da}, dk, rng);
      s.add_uniform(name(i, "bk"), {1, da}, dk, rng);
    }
  }

  double logit_scale() const { return cfg_.scaled_logits ? 1.0 / std::sqrt(static_cast<double>(cfg_.da())) : 1.0; }

  /// One [1 x d_k] vector per context: e^0 everywhere in the context, then
  /// I rounds of attention over incident triples; the center's last state
  /// is returned. Nodes without incident triples keep their state.
  ContextEncoding encode(Tape& t, ParamStore& s, const std::vector<RawContext>& ctxs, const EmbeddingTable& table, Var sent,
                         bool trace = false) const {
    const std::size_t dk = cfg_.kg_dim;
    if (table.dim != dk) throw ShapeError("sgnn: embedding dim " + std::to_string(table.dim) + " != d_k " + std::to_string(dk));
    if (sent.value().rows() != 1 || sent.value().cols() != cfg_.text_dim)
      throw ShapeError("sgnn: sentence vector must be [1x" + std::to_string(cfg_.text_dim) + "], got " +
                       shape_str(sent.value().shape()));

    std::vector<Var> queries;
    if (cfg_.attention == NeighborAttention::semantic)
      for (std::size_t i = 0; i < cfg_.layers; ++i)
        queries.push_back(tanh(linear(sent, t.param(s, name(i, "Wq")), t.param(s, name(i, "bq")))));

    ContextEncoding out;
    for (const RawContext& ctx : ctxs) {
      const std::vector<EntityId> ents = ctx.entities();
      std::unordered_map<EntityId, std::size_t> local;
      Tensor e0 = Tensor::zeros(ents.size(), dk);
      for (std::size_t j = 0; j < ents.size(); ++j) {
        if (ents[j] >= table.num_entities())
          throw Error("sgnn: missing embedding for entity id " + std::to_string(ents[j]));
        local.emplace(ents[j], j);
        std::copy(table.entity(ents[j]).begin(), table.entity(ents[j]).end(), e0.row_span(j).begin());
      }

      std::vector<std::size_t> target, source;
      std::vector<double> nr, signed_r;
      std::vector<bool> has_edges(ents.size(), false);
      for (std::size_t j = 0; j < ents.size(); ++j) {
        for (const Neighbor& nb : ctx.neighbors_of(ents[j])) {
          auto it = local.find(nb.neighbor);
          if (it == local.end()) throw Error("sgnn: neighbor outside context");
          if (nb.relation >= table.num_relations())
            throw Error("sgnn: missing embedding for relation id " + std::to_string(nb.relation));
          const double sign = nb.direction == Direction::incoming ? 1.0 : -1.0;
          auto n = table.entity(nb.neighbor);
          auto r = table.relation(nb.relation);
          for (std::size_t c = 0; c < dk; ++c) {
            nr.push_back(n[c] + sign * r[c]);
            signed_r.push_back(sign * r[c]);
          }
          target.push_back(j);
          source.push_back(it->second);
          has_edges[j] = true;
        }
      }
      const std::size_t center = local.at(ctx.center);
      out.isolated.push_back(!has_edges[center]);
      out.edge_targets.push_back(target);
      out.weights.emplace_back();

      Var e0v = t.constant(e0);
      Var state = e0v;
      if (!target.empty()) {
        const std::size_t E = target.size();
        Var nr_c = t.constant(Tensor({E, dk}, nr));
        Var r_c = t.constant(Tensor({E, dk}, signed_r));
        for (std::size_t i = 0; i < cfg_.layers; ++i) {
          Var msg = matmul(concat_cols({nr_c, gather_rows(state, source)}), t.param(s, name(i, "W")));
          Var logits;
          if (cfg_.attention == NeighborAttention::semantic) {
            Var k = linear(r_c, t.param(s, name(i, "Wk")), t.param(s, name(i, "bk")));
            logits = matmul_nt(k, queries[i]);
            if (cfg_.scaled_logits) logits = scale(logits, logit_scale());
          } else {
            logits = t.constant(Tensor::zeros(E, 1));
          }
          Var alpha = segment_softmax(logits, target, ents.size());
          if (trace) out.weights.back().push_back(alpha.value());
          Var agg = scatter_add_rows(scale_rows(msg, alpha), target, ents.size());
          if (cfg_.center_residual) agg = add(agg, e0v);
          state = row_select(has_edges, agg, state);
        }
      }
      out.mentions.push_back(gather_rows(state, {center}));
    }
    return out;
  }

  /// Top-layer attention of the sentence over the center's own incident
  /// triples (the weights that form the mention vector), reported per
  /// triple without the weighted sum.
  TripleRanking rank_triples(const ParamStore& s, const RawContext& ctx, const EmbeddingTable& table,
                             std::span<const double> sent) const {
    TripleRanking out;
    out.center = ctx.center;
    const auto& nbs = ctx.neighbors_of(ctx.center);
    if (nbs.empty()) {
      out.warning = true;
      out.message = "entity has no incident triples in its context";
      return out;
    }
    const std::size_t top = cfg_.layers - 1;
    std::vector<double> q(cfg_.da(), 0.0);
    if (cfg_.attention == NeighborAttention::semantic) q = sgnn::query(s.get(name(top, "Wq")).value, s.get(name(top, "bq")).value, sent);
    Tensor logits = Tensor::zeros(1, nbs.size());
    for (std::size_t j = 0; j < nbs.size(); ++j) {
      auto k = sgnn::key(s.get(name(top, "Wk")).value, s.get(name(top, "bk")).value, table.relation(nbs[j].relation), nbs[j].direction);
      double dot = 0.0;
      for (std::size_t c = 0; c < q.size(); ++c) dot += k[c] * q[c];
      logits(0, j) = dot * logit_scale();
    }
    Tensor w = kernels::softmax_rows(logits);
    for (std::size_t j = 0; j < nbs.size(); ++j)
      out.scores.push_back({nbs[j].triple, nbs[j].neighbor, nbs[j].relation, nbs[j].direction, w(0, j)});
    std::stable_sort(out.scores.begin(), out.scores.end(), [](const TripleScore& a, const TripleScore& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      if (a.triple != b.triple) return a.triple < b.triple;
      return a.direction < b.direction;
    });
    return out;
  }

 private:
  SGnnConfig cfg_{};
  std::string prefix_ = "sgnn";
};

}  // namespace dkctx
