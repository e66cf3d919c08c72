// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dkctx/numerics/layers.hpp"
#include "dkctx/text/annotated.hpp"

namespace dkctx {

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 128;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t max_seq_len = 64;
  std::size_t segments = 2;

  void validate() const {
    if (vocab_size == 0) throw Error("text encoder: vocab_size must be positive");
    if (dim == 0 || layers == 0 || heads == 0 || max_seq_len == 0 || ffn_mult == 0 || segments == 0)
      throw Error("text encoder: dims, layers, heads and max_seq_len must be positive");
    if (dim % heads != 0)
      throw Error("text encoder: dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  }

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size}, {"dim", dim}, {"layers", layers}, {"heads", heads},
            {"ffn_mult", ffn_mult}, {"max_seq_len", max_seq_len}, {"segments", segments}};
  }
};

struct TextEncoding {
  Var tokens;  // [N x dim]
  Var cls;     // [1 x dim]
  std::vector<std::vector<Tensor>> attention;  // [layer][head], filled when traced
};

/// Post-LN bidirectional Transformer with learned absolute positions.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(TextEncoderConfig cfg, std::string prefix = "text") : cfg_(cfg), prefix_(std::move(prefix)) { cfg_.validate(); }

  const TextEncoderConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

  void init(ParamStore& s, Rng& rng) const {
    const std::size_t d = cfg_.dim;
    s.add_uniform(prefix_ + "/tok_emb", {cfg_.vocab_size, d}, d, rng);
    s.add_uniform(prefix_ + "/pos_emb", {cfg_.max_seq_len, d}, d, rng);
    s.add_uniform(prefix_ + "/seg_emb", {cfg_.segments, d}, d, rng);
    layers::init_layer_norm(s, prefix_ + "/emb_ln", d);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = layer_prefix(l);
      layers::init_attention(s, p + "/attn", d, rng);
      layers::init_layer_norm(s, p + "/ln1", d);
      layers::init_ffn(s, p + "/ffn", d, d * cfg_.ffn_mult, rng);
      layers::init_layer_norm(s, p + "/ln2", d);
    }
  }

  TextEncoding encode(Tape& t, ParamStore& s, const AnnotatedText& at, bool trace = false) const {
    const std::size_t n = at.size();
    if (n == 0) throw Error("t_encode: empty sequence");
    if (n > cfg_.max_seq_len)
      throw Error("t_encode: sequence of " + std::to_string(n) + " tokens exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    std::vector<std::size_t> tok(at.tokens.begin(), at.tokens.end()), pos(n), seg(at.segments.begin(), at.segments.end());
    for (std::size_t i = 0; i < n; ++i) {
      if (tok[i] >= cfg_.vocab_size) throw Error("t_encode: token id " + std::to_string(tok[i]) + " outside vocabulary");
      if (seg[i] >= cfg_.segments) throw Error("t_encode: segment id out of range");
      pos[i] = i;
    }
    Var x = add(add(gather_rows(t.param(s, prefix_ + "/tok_emb"), tok), gather_rows(t.param(s, prefix_ + "/pos_emb"), pos)),
                gather_rows(t.param(s, prefix_ + "/seg_emb"), seg));
    x = layers::layer_norm(t, s, prefix_ + "/emb_ln", x);

    TextEncoding out;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = layer_prefix(l);
      std::vector<Tensor> probs;
      Var a = layers::self_attention(t, s, p + "/attn", x, cfg_.heads, &at.attention_mask, trace ? &probs : nullptr);
      x = layers::layer_norm(t, s, p + "/ln1", add(x, a));
      x = layers::layer_norm(t, s, p + "/ln2", add(x, layers::ffn(t, s, p + "/ffn", x)));
      if (trace) out.attention.push_back(std::move(probs));
    }
    out.tokens = x;
    out.cls = gather_rows(x, {0});
    return out;
  }

 private:
  std::string layer_prefix(std::size_t l) const { return prefix_ + "/layer" + std::to_string(l); }

  TextEncoderConfig cfg_{};
  std::string prefix_ = "text";
};

}  // namespace dkctx
