// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkctx/fusion/fusion.hpp"
#include "dkctx/fusion/pretrain.hpp"
#include "dkctx/sgnn/sgnn.hpp"
#include "dkctx/text/encoder.hpp"

namespace dkctx {

struct ModelConfig {
  std::size_t text_dim = 128;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t max_seq_len = 64;
  std::size_t kg_dim = 32;
  std::size_t attn_dim = 0;  // 0 means kg_dim
  std::size_t hops = 2;      // K, also the S-GNN depth
  std::size_t aggregators = 2;
  std::size_t entity_heads = 2;
  std::size_t max_neighbors_per_hop = 64;
  NeighborAttention attention = NeighborAttention::semantic;
  bool scaled_logits = false;
  bool center_residual = false;
  PretrainMode mode = PretrainMode::roberta_style;
  MaskingConfig masking{};

  void validate() const {
    if (hops == 0) throw Error("model: K must be at least 1");
    if (text_dim == 0 || kg_dim == 0 || layers == 0 || heads == 0 || max_seq_len == 0 || aggregators == 0)
      throw Error("model: dims, layers, heads and aggregators must be positive");
    if (text_dim % heads) throw Error("model: d_w not divisible by H");
    if (kg_dim % entity_heads) throw Error("model: d_k not divisible by entity heads");
  }

  TextEncoderConfig text(std::size_t vocab_size) const {
    return {.vocab_size = vocab_size, .dim = text_dim, .layers = layers, .heads = heads, .max_seq_len = max_seq_len};
  }
  SGnnConfig sgnn() const {
    return {.kg_dim = kg_dim, .text_dim = text_dim, .attn_dim = attn_dim, .layers = hops, .attention = attention,
            .scaled_logits = scaled_logits, .center_residual = center_residual};
  }
  FusionConfig fusion() const {
    return {.text_dim = text_dim, .kg_dim = kg_dim, .heads = heads, .entity_heads = entity_heads, .aggregators = aggregators};
  }
  HopOptions hop_options(std::uint64_t seed) const { return {.max_neighbors_per_hop = max_neighbors_per_hop, .seed = seed}; }

  nlohmann::json to_json() const {
    return {{"text_dim", text_dim},
            {"layers", layers},
            {"heads", heads},
            {"max_seq_len", max_seq_len},
            {"kg_dim", kg_dim},
            {"attn_dim", attn_dim == 0 ? kg_dim : attn_dim},
            {"hops", hops},
            {"aggregators", aggregators},
            {"entity_heads", entity_heads},
            {"max_neighbors_per_hop", max_neighbors_per_hop},
            {"attention", to_string(attention)},
            {"scaled_logits", scaled_logits},
            {"center_residual", center_residual},
            {"mode", to_string(mode)},
            {"masking", masking.to_json()}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.text_dim = j.at("text_dim");
    c.layers = j.at("layers");
    c.heads = j.at("heads");
    c.max_seq_len = j.at("max_seq_len");
    c.kg_dim = j.at("kg_dim");
    c.attn_dim = j.at("attn_dim");
    c.hops = j.at("hops");
    c.aggregators = j.at("aggregators");
    c.entity_heads = j.at("entity_heads");
    c.max_neighbors_per_hop = j.at("max_neighbors_per_hop");
    c.attention = parse_neighbor_attention(j.at("attention"));
    c.scaled_logits = j.at("scaled_logits");
    c.center_residual = j.at("center_residual");
    c.mode = parse_pretrain_mode(j.at("mode"));
    const auto& m = j.at("masking");
    c.masking.mlm_rate = m.at("mlm_rate");
    c.masking.mlm_mask = m.at("mlm_mask");
    c.masking.mlm_random = m.at("mlm_random");
    c.masking.dea_mask_rate = m.at("dea_mask_rate");
    c.masking.dea_replace_rate = m.at("dea_replace_rate");
    c.masking.dea_negatives = m.at("dea_negatives");
    c.masking.dea_context_share = m.value("dea_context_share", 0.5);
    c.masking.dea_predict_all = m.value("dea_predict_all", true);
    return c;
  }
};

/// Text plus the entities fed to the fusion layer and the token each one
/// is anchored to (the first token of its mention).
struct ModelInput {
  AnnotatedText text;
  std::vector<EntityId> entities;
  std::vector<std::size_t> anchors;
};

struct ModelOutput {
  TextEncoding text;
  ContextEncoding context;
  FusionOutput fused;
};

/// Shared read-only resources a model runs against.
struct World {
  const KnowledgeGraph* kg = nullptr;
  const EmbeddingTable* table = nullptr;
  const Vocabulary* vocab = nullptr;
};

class Model {
 public:
  Model(ModelConfig cfg, World world, std::uint64_t seed = 0)
      : cfg_(cfg), world_(world), seed_(seed) {
    cfg_.validate();
    if (!world_.kg || !world_.table || !world_.vocab) throw Error("model: world is incomplete");
    if (world_.table->dim != cfg_.kg_dim)
      throw ManifestError("embedding dim mismatch: table has " + std::to_string(world_.table->dim) + ", config expects " +
                          std::to_string(cfg_.kg_dim));
    if (world_.table->num_entities() != world_.kg->num_entities() || world_.table->num_relations() != world_.kg->num_relations())
      throw ManifestError("embedding table does not cover the knowledge graph vocabulary");
    text_ = TextEncoder(cfg_.text(world_.vocab->size()));
    sgnn_ = SGnn(cfg_.sgnn());
    fusion_ = FusionEncoder(cfg_.fusion());
  }

  const ModelConfig& config() const { return cfg_; }
  const World& world() const { return world_; }
  const TextEncoder& text_encoder() const { return text_; }
  const SGnn& sgnn() const { return sgnn_; }
  const FusionEncoder& fusion() const { return fusion_; }
  const PretrainHeads& heads() const { return heads_; }

  void init(ParamStore& s, Rng& rng) const {
    text_.init(s, rng);
    sgnn_.init(s, rng);
    fusion_.init(s, rng);
    heads_.init(s, rng, cfg_.text_dim, cfg_.kg_dim, world_.vocab->size());
  }

  const RawContext& context(EntityId e) const {
    auto it = contexts_.find(e);
    if (it == contexts_.end())
      it = contexts_.emplace(e, raw_context(*world_.kg, e, cfg_.hops, cfg_.hop_options(seed_))).first;
    return it->second;
  }

  /// Every mention, linked through the graph by name.
  ModelInput input_for(const AnnotatedText& at) const {
    ModelInput in{at, {}, {}};
    for (const Mention& m : at.mentions) {
      in.entities.push_back(world_.kg->entity_id(m.entity));
      in.anchors.push_back(m.start);
    }
    return in;
  }

  ModelOutput forward(Tape& t, ParamStore& s, const ModelInput& in, bool trace = false) const {
    if (in.entities.size() != in.anchors.size()) throw Error("model: entity and anchor counts differ");
    ModelOutput out;
    out.text = text_.encode(t, s, in.text, trace);
    std::vector<RawContext> ctxs;
    for (EntityId e : in.entities) ctxs.push_back(context(e));
    out.context = sgnn_.encode(t, s, ctxs, *world_.table, out.text.cls, trace);
    std::optional<Var> ents;
    if (!ctxs.empty()) ents = out.context.stacked();
    out.fused = fusion_.fuse(t, s, out.text.tokens, ents, in.anchors, &in.text.attention_mask);
    return out;
  }

 private:
  ModelConfig cfg_;
  World world_;
  std::uint64_t seed_ = 0;
  TextEncoder text_;
  SGnn sgnn_;
  FusionEncoder fusion_;
  PretrainHeads heads_;
  mutable std::map<EntityId, RawContext> contexts_;
};

}  // namespace dkctx
