// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "dkctx/model/model.hpp"

namespace dkctx {

struct PretrainSample {
  AnnotatedText text;
  std::optional<std::size_t> nsp_label;  // 1 when the second segment really follows
};

/// [CLS] a [SEP] b [SEP] with segment ids 0 / 1.
inline AnnotatedText make_pair(const AnnotatedText& a, const AnnotatedText& b, const Vocabulary& vocab) {
  AnnotatedText out;
  auto push = [&](const std::string& w, TokenId id, std::size_t seg) {
    out.words.push_back(w);
    out.tokens.push_back(id);
    out.attention_mask.push_back(true);
    out.segments.push_back(seg);
  };
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.attention_mask[i]) push(a.words[i], a.tokens[i], 0);
  out.mentions = a.mentions;
  push(std::string(special::kSep), vocab.sep(), 0);
  const std::size_t shift = out.size() - 1;  // b's [CLS] is dropped
  for (std::size_t i = 1; i < b.size(); ++i)
    if (b.attention_mask[i]) push(b.words[i], b.tokens[i], 1);
  push(std::string(special::kSep), vocab.sep(), 1);
  for (Mention m : b.mentions) {
    m.start += shift;
    m.end += shift;
    out.mentions.push_back(m);
  }
  out.validate();
  return out;
}

/// roberta_style: one sample per sentence. bert_style: each sentence is
/// paired with its successor (label 1) or a random other sentence (label 0)
/// with equal odds.
inline std::vector<PretrainSample> build_samples(const std::vector<AnnotatedText>& corpus, PretrainMode mode,
                                                 const Vocabulary& vocab, Rng& rng) {
  std::vector<PretrainSample> out;
  if (mode == PretrainMode::roberta_style || corpus.size() < 3) {
    if (mode == PretrainMode::bert_style) throw Error("sentence pairs need at least 3 sentences");
    for (const auto& at : corpus) out.push_back({at, std::nullopt});
    return out;
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::size_t next = (i + 1) % corpus.size();
    if (rng.bernoulli(0.5)) {
      out.push_back({make_pair(corpus[i], corpus[next], vocab), 1});
    } else {
      std::size_t j = rng.below(corpus.size() - 2);
      // skip i and next
      for (std::size_t skip : {std::min(i, next), std::max(i, next)})
        if (j >= skip) ++j;
      out.push_back({make_pair(corpus[i], corpus[j], vocab), 0});
    }
  }
  return out;
}

struct PreparedBatch {
  std::vector<ModelInput> inputs;
  std::vector<std::size_t> offsets;  // first row of each input in the stacked token matrix
  std::vector<std::size_t> mlm_positions;
  std::vector<TokenId> mlm_targets;
  std::vector<DeaTarget> dea;
  std::vector<std::size_t> nsp_rows;
  std::vector<std::size_t> nsp_labels;
  std::size_t alignments = 0;
  std::size_t masked = 0;
  std::size_t replaced = 0;
};

/// Corrupts tokens and alignments. Masked alignments are withheld from the
/// fusion layer, replaced ones feed a random entity. The true entity of every
/// alignment is a dEA target (only the masked ones with dea_predict_all off).
/// If sampling masks nothing, one alignment is masked.
inline PreparedBatch prepare_batch(const Model& model, const std::vector<PretrainSample>& samples, Rng& rng) {
  const World& w = model.world();
  const MaskingConfig& mc = model.config().masking;
  const std::size_t n_ent = w.kg->num_entities();
  PreparedBatch b;
  std::size_t row = 0;
  struct Pending {
    std::size_t sample, mention;
    AlignmentFate fate;
  };
  std::vector<Pending> fates;
  std::vector<MlmMask> masks;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    masks.push_back(mask_tokens(s.text, *w.vocab, mc, rng));
    auto f = sample_alignment_fates(s.text.mentions.size(), mc, rng);
    for (std::size_t j = 0; j < f.size(); ++j) fates.push_back({k, j, f[j]});
  }
  if (fates.empty()) throw Error("prepare_batch: batch has no entity mentions");
  if (std::none_of(fates.begin(), fates.end(), [](const Pending& p) { return p.fate == AlignmentFate::masked; }))
    fates[rng.below(fates.size())].fate = AlignmentFate::masked;

  std::size_t f_idx = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    ModelInput in{masks[k].corrupted, {}, {}};
    b.offsets.push_back(row);
    for (std::size_t i = 0; i < masks[k].positions.size(); ++i) {
      b.mlm_positions.push_back(row + masks[k].positions[i]);
      b.mlm_targets.push_back(masks[k].targets[i]);
    }
    for (std::size_t j = 0; j < s.text.mentions.size(); ++j, ++f_idx) {
      const Mention& m = s.text.mentions[j];
      const EntityId truth = w.kg->entity_id(m.entity);
      ++b.alignments;
      const AlignmentFate fate = fates[f_idx].fate;
      switch (fate) {
        case AlignmentFate::masked:
          ++b.masked;
          break;
        case AlignmentFate::replaced: {
          ++b.replaced;
          EntityId other = truth;
          if (n_ent > 1) {
            other = static_cast<EntityId>(rng.below(n_ent - 1));
            if (other >= truth) ++other;
          }
          in.entities.push_back(other);
          in.anchors.push_back(m.start);
          break;
        }
        case AlignmentFate::kept:
          in.entities.push_back(truth);
          in.anchors.push_back(m.start);
          break;
      }
      if (fate != AlignmentFate::masked && !mc.dea_predict_all) continue;
      std::vector<EntityId> near;
      const auto share = static_cast<std::size_t>(mc.dea_context_share * static_cast<double>(mc.dea_negatives));
      if (share > 0 && fate == AlignmentFate::masked)
        for (const Mention& o : s.text.mentions) {
          const EntityId oe = w.kg->entity_id(o.entity);
          if (oe == truth) continue;
          for (TripleId id : w.kg->out_triples(oe)) near.push_back(w.kg->triple(id).tail);
          for (TripleId id : w.kg->in_triples(oe)) near.push_back(w.kg->triple(id).head);
        }
      b.dea.push_back({row + m.start, truth, sample_candidates(truth, n_ent, mc.dea_negatives, rng, std::move(near), share)});
    }
    if (s.nsp_label) {
      b.nsp_rows.push_back(row);
      b.nsp_labels.push_back(*s.nsp_label);
    }
    row += s.text.size();
    b.inputs.push_back(std::move(in));
  }
  return b;
}

/// Forward every input, stack the fused token rows and evaluate the loss
/// terms the configured mode needs.
inline LossParts<Var> pretrain_losses(Tape& t, ParamStore& s, const Model& model, const PreparedBatch& b) {
  std::vector<Var> rows;
  for (const ModelInput& in : b.inputs) rows.push_back(model.forward(t, s, in).fused.tokens);
  Var stacked = rows.size() == 1 ? rows[0] : concat_rows(rows);
  LossParts<Var> p;
  p.mlm = model.heads().mlm_loss(t, s, stacked, b.mlm_positions, b.mlm_targets);
  p.dea = model.heads().dea_loss(t, s, stacked, b.dea, *model.world().table);
  if (model.config().mode == PretrainMode::bert_style)
    p.nsp = model.heads().nsp_loss(t, s, gather_rows(stacked, b.nsp_rows), b.nsp_labels);
  return p;
}

}  // namespace dkctx
