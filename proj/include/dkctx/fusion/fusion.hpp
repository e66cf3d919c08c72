// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkctx/numerics/layers.hpp"

namespace dkctx {

struct FusionConfig {
  std::size_t text_dim = 128;
  std::size_t kg_dim = 32;
  std::size_t heads = 4;
  std::size_t entity_heads = 2;
  std::size_t aggregators = 2;  // P

  void validate() const {
    if (text_dim == 0 || kg_dim == 0 || aggregators == 0) throw Error("fusion: dims and aggregator count must be positive");
    if (heads == 0 || text_dim % heads) throw Error("fusion: text dim not divisible by heads");
    if (entity_heads == 0 || kg_dim % entity_heads) throw Error("fusion: kg dim not divisible by entity heads");
  }

  nlohmann::json to_json() const {
    return {{"text_dim", text_dim}, {"kg_dim", kg_dim}, {"heads", heads}, {"entity_heads", entity_heads},
            {"aggregators", aggregators}};
  }
};

struct FusionOutput {
  Var tokens;                    // [N x d_w]
  std::optional<Var> entities;   // [M x d_k], absent when M = 0
};

/// P stacked aggregators. Each runs self-attention on both sides, mixes an
/// entity into the token it is aligned to through a shared hidden layer,
/// and projects the mix back to each side.
class FusionEncoder {
 public:
  FusionEncoder() = default;
  FusionEncoder(FusionConfig cfg, std::string prefix = "fusion") : cfg_(cfg), prefix_(std::move(prefix)) { cfg_.validate(); }

  const FusionConfig& config() const { return cfg_; }

  void init(ParamStore& s, Rng& rng) const {
    const std::size_t dw = cfg_.text_dim, dk = cfg_.kg_dim;
    for (std::size_t p = 0; p < cfg_.aggregators; ++p) {
      const std::string a = agg_prefix(p);
      layers::init_attention(s, a + "/tok_attn", dw, rng);
      layers::init_layer_norm(s, a + "/tok_ln", dw);
      layers::init_attention(s, a + "/ent_attn", dk, rng);
      layers::init_layer_norm(s, a + "/ent_ln", dk);
      s.add_uniform(a + "/W_t", {dw, dw}, dw, rng);
      s.add_uniform(a + "/W_e", {dk, dw}, dk, rng);
      s.add_uniform(a + "/b", {1, dw}, dw, rng);
      layers::init_linear(s, a + "/tok_out", dw, dw, rng);
      layers::init_layer_norm(s, a + "/tok_out_ln", dw);
      layers::init_linear(s, a + "/ent_out", dw, dk, rng);
      layers::init_layer_norm(s, a + "/ent_out_ln", dk);
    }
  }

  /// alignment[j] is the token index the j-th entity row is anchored to.
  FusionOutput fuse(Tape& t, ParamStore& s, Var tokens, std::optional<Var> entities, const std::vector<std::size_t>& alignment,
                    const std::vector<bool>* key_mask = nullptr, std::vector<std::vector<Tensor>>* trace = nullptr) const {
    const std::size_t n = tokens.value().rows();
    if (tokens.value().cols() != cfg_.text_dim) throw ShapeError("fuse: token width " + shape_str(tokens.value().shape()));
    const std::size_t m = entities ? entities->value().rows() : 0;
    if (entities && entities->value().cols() != cfg_.kg_dim) throw ShapeError("fuse: entity width " + shape_str(entities->value().shape()));
    if (alignment.size() != m)
      throw Error("fuse: " + std::to_string(alignment.size()) + " alignments for " + std::to_string(m) + " entities");
    for (std::size_t a : alignment)
      if (a >= n) throw Error("fuse: alignment index " + std::to_string(a) + " out of range for " + std::to_string(n) + " tokens");
    if (m == 0) entities.reset();

    Var w = tokens;
    std::optional<Var> e = entities;
    for (std::size_t p = 0; p < cfg_.aggregators; ++p) {
      const std::string a = agg_prefix(p);
      std::vector<Tensor> probs;
      Var wt = layers::layer_norm(
          t, s, a + "/tok_ln", add(w, layers::self_attention(t, s, a + "/tok_attn", w, cfg_.heads, key_mask, trace ? &probs : nullptr)));
      if (trace) trace->push_back(std::move(probs));
      Var pre = add(matmul(wt, t.param(s, a + "/W_t")), t.param(s, a + "/b"));
      std::optional<Var> et;
      if (e) {
        et = layers::layer_norm(t, s, a + "/ent_ln", add(*e, layers::self_attention(t, s, a + "/ent_attn", *e, cfg_.entity_heads)));
        pre = add(pre, scatter_add_rows(matmul(*et, t.param(s, a + "/W_e")), alignment, n));
      }
      Var h = gelu(pre);
      w = layers::layer_norm(t, s, a + "/tok_out_ln", add(wt, layers::linear(t, s, a + "/tok_out", h)));
      if (e) e = layers::layer_norm(t, s, a + "/ent_out_ln", add(*et, layers::linear(t, s, a + "/ent_out", gather_rows(h, alignment))));
    }
    return {w, e};
  }

 private:
  std::string agg_prefix(std::size_t p) const { return prefix_ + "/agg" + std::to_string(p); }

  FusionConfig cfg_{};
  std::string prefix_ = "fusion";
};

}  // namespace dkctx
