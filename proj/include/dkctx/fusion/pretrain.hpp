// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkctx/embed/transe.hpp"
#include "dkctx/numerics/layers.hpp"
#include "dkctx/text/annotated.hpp"

namespace dkctx {

enum class PretrainMode { bert_style, roberta_style };

inline const char* to_string(PretrainMode m) { return m == PretrainMode::bert_style ? "bert_style" : "roberta_style"; }
inline PretrainMode parse_pretrain_mode(const std::string& s) {
  if (s == "bert_style" || s == "bert") return PretrainMode::bert_style;
  if (s == "roberta_style" || s == "roberta") return PretrainMode::roberta_style;
  throw Error("unknown pretraining mode '" + s + "' (expected bert_style or roberta_style)");
}

struct MaskingConfig {
  double mlm_rate = 0.15;
  double mlm_mask = 0.8;
  double mlm_random = 0.1;
  double dea_mask_rate = 0.15;
  double dea_replace_rate = 0.05;
  std::size_t dea_negatives = 15;
  // share of a masked target's negatives drawn from the neighbors of the
  // sample's other mentions; the rest are uniform
  double dea_context_share = 0.5;
  // every alignment is a target, not only the masked ones
  bool dea_predict_all = true;

  nlohmann::json to_json() const {
    return {{"mlm_rate", mlm_rate},           {"mlm_mask", mlm_mask},
            {"mlm_random", mlm_random},       {"dea_mask_rate", dea_mask_rate},
            {"dea_replace_rate", dea_replace_rate}, {"dea_negatives", dea_negatives},
            {"dea_context_share", dea_context_share},
            {"dea_predict_all", dea_predict_all},
            {"dea_candidates", "truth plus sampled negatives"}};
  }
};

struct MlmMask {
  AnnotatedText corrupted;
  std::vector<std::size_t> positions;
  std::vector<TokenId> targets;
};

/// Picks each non-special real token with probability rate (at least one
/// when any is eligible) and applies the mask / random / keep split.
inline MlmMask mask_tokens(const AnnotatedText& at, const Vocabulary& vocab, const MaskingConfig& cfg, Rng& rng) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < at.size(); ++i)
    if (at.attention_mask[i] && !vocab.is_special(at.tokens[i])) eligible.push_back(i);
  MlmMask out{at, {}, {}};
  for (std::size_t i : eligible)
    if (rng.bernoulli(cfg.mlm_rate)) out.positions.push_back(i);
  if (out.positions.empty() && !eligible.empty()) out.positions.push_back(eligible[rng.below(eligible.size())]);
  std::vector<TokenId> ordinary;
  for (TokenId t = 0; t < vocab.size(); ++t)
    if (!vocab.is_special(t)) ordinary.push_back(t);
  for (std::size_t i : out.positions) {
    out.targets.push_back(at.tokens[i]);
    const double u = rng.uniform(0.0, 1.0);
    if (u < cfg.mlm_mask) {
      out.corrupted.tokens[i] = vocab.mask();
    } else if (u < cfg.mlm_mask + cfg.mlm_random && !ordinary.empty()) {
      out.corrupted.tokens[i] = ordinary[rng.below(ordinary.size())];
    }
    out.corrupted.words[i] = vocab.token(out.corrupted.tokens[i]);
  }
  return out;
}

enum class AlignmentFate { kept, masked, replaced };

inline std::vector<AlignmentFate> sample_alignment_fates(std::size_t n, const MaskingConfig& cfg, Rng& rng) {
  std::vector<AlignmentFate> out(n, AlignmentFate::kept);
  for (auto& f : out) {
    const double u = rng.uniform(0.0, 1.0);
    if (u < cfg.dea_mask_rate)
      f = AlignmentFate::masked;
    else if (u < cfg.dea_mask_rate + cfg.dea_replace_rate)
      f = AlignmentFate::replaced;
  }
  return out;
}

struct DeaTarget {
  std::size_t position = 0;  // row in the fused token matrix
  EntityId truth = 0;
  std::vector<EntityId> candidates;
};

/// truth plus up to `negatives` distinct other entities, in shuffled order.
/// Up to max_preferred entities come from `preferred`, the rest uniformly.
inline std::vector<EntityId> sample_candidates(EntityId truth, std::size_t num_entities, std::size_t negatives, Rng& rng,
                                               std::vector<EntityId> preferred = {},
                                               std::size_t max_preferred = static_cast<std::size_t>(-1)) {
  if (truth >= num_entities) throw Error("sample_candidates: truth id out of range");
  const std::size_t k = std::min(negatives, num_entities - 1);
  std::vector<EntityId> out{truth};
  std::vector<bool> used(num_entities, false);
  used[truth] = true;
  std::sort(preferred.begin(), preferred.end());
  preferred.erase(std::unique(preferred.begin(), preferred.end()), preferred.end());
  rng.shuffle(preferred);
  for (EntityId e : preferred) {
    if (out.size() > k || out.size() > max_preferred) break;
    if (e >= num_entities) throw Error("sample_candidates: preferred id out of range");
    if (!used[e]) {
      used[e] = true;
      out.push_back(e);
    }
  }
  const std::size_t rest = k + 1 - out.size();
  if (rest > 0) {
    std::vector<EntityId> pool;
    for (EntityId e = 0; e < num_entities; ++e)
      if (!used[e]) pool.push_back(e);
    for (std::size_t idx : rng.sample_indices(pool.size(), rest)) out.push_back(pool[idx]);
  }
  rng.shuffle(out);
  return out;
}

/// Output heads used only during pre-training.
struct PretrainHeads {
  std::string prefix = "pretrain";

  void init(ParamStore& s, Rng& rng, std::size_t text_dim, std::size_t kg_dim, std::size_t vocab_size) const {
    layers::init_linear(s, prefix + "/mlm", text_dim, vocab_size, rng);
    layers::init_linear(s, prefix + "/nsp", text_dim, 2, rng);
    s.add_uniform(prefix + "/dea", {text_dim, kg_dim}, text_dim, rng);
  }

  /// Mean cross-entropy over the vocabulary at the given rows.
  Var mlm_loss(Tape& t, ParamStore& s, Var tokens, const std::vector<std::size_t>& positions,
               const std::vector<TokenId>& targets) const {
    if (positions.empty()) throw Error("mlm_loss: no masked positions");
    if (positions.size() != targets.size()) throw ShapeError("mlm_loss: positions and targets differ in length");
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    return cross_entropy(layers::linear(t, s, prefix + "/mlm", gather_rows(tokens, positions)), tg);
  }

  Var nsp_loss(Tape& t, ParamStore& s, Var cls_rows, const std::vector<std::size_t>& labels) const {
    if (labels.empty()) throw Error("nsp_loss: no sentence pairs");
    return cross_entropy(layers::linear(t, s, prefix + "/nsp", cls_rows), labels);
  }

  /// Mean cross-entropy of softmax over each target's candidate logits,
  /// logit_c = (w . W_dea) . v_c with v_c the static entity vector.
  Var dea_loss(Tape& t, ParamStore& s, Var tokens, const std::vector<DeaTarget>& targets, const EmbeddingTable& table) const {
    if (targets.empty()) throw Error("dea_loss: no masked alignments");
    std::vector<std::size_t> rows;
    for (const DeaTarget& d : targets) rows.push_back(d.position);
    Var proj = matmul(gather_rows(tokens, rows), t.param(s, prefix + "/dea"));
    std::vector<Var> losses;
    for (std::size_t j = 0; j < targets.size(); ++j) {
      const DeaTarget& d = targets[j];
      auto it = std::find(d.candidates.begin(), d.candidates.end(), d.truth);
      if (it == d.candidates.end()) throw Error("dea_loss: candidate set lacks the true entity " + std::to_string(d.truth));
      Tensor cand = Tensor::zeros(d.candidates.size(), table.dim);
      for (std::size_t c = 0; c < d.candidates.size(); ++c) {
        if (d.candidates[c] >= table.num_entities()) throw Error("dea_loss: candidate id out of range");
        auto v = table.entity(d.candidates[c]);
        std::copy(v.begin(), v.end(), cand.row_span(c).begin());
      }
      Var logits = matmul_nt(gather_rows(proj, {j}), t.constant(std::move(cand)));
      losses.push_back(cross_entropy(logits, {static_cast<std::size_t>(it - d.candidates.begin())}));
    }
    Var total = losses[0];
    for (std::size_t j = 1; j < losses.size(); ++j) total = add(total, losses[j]);
    return scale(total, 1.0 / static_cast<double>(losses.size()));
  }
};

template <class T>
struct LossParts {
  std::optional<T> mlm, nsp, dea;
};

namespace detail {
template <class T>
const T& need(const std::optional<T>& v, const char* name) {
  if (!v) throw Error(std::string("total_loss: missing ") + name + " term");
  return *v;
}
}  // namespace detail

/// bert_style: MLM + NSP + dEA. roberta_style: MLM + dEA.
inline double total_loss(const LossParts<double>& p, PretrainMode mode) {
  double sum = detail::need(p.mlm, "mlm") + detail::need(p.dea, "dea");
  if (mode == PretrainMode::bert_style) sum += detail::need(p.nsp, "nsp");
  return sum;
}

inline Var total_loss(const LossParts<Var>& p, PretrainMode mode) {
  Var sum = add(detail::need(p.mlm, "mlm"), detail::need(p.dea, "dea"));
  if (mode == PretrainMode::bert_style) sum = add(sum, detail::need(p.nsp, "nsp"));
  return sum;
}

}  // namespace dkctx
