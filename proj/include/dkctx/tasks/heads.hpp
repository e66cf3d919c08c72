// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkctx/model/model.hpp"
#include "dkctx/numerics/optim.hpp"

namespace dkctx {

/// Closed label vocabulary in insertion order.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(const std::vector<std::string>& labels) {
    for (const auto& l : labels) add(l);
  }
  std::size_t add(const std::string& l) {
    auto [it, inserted] = index_.try_emplace(l, names_.size());
    if (inserted) names_.push_back(l);
    return it->second;
  }
  std::size_t id(const std::string& l) const {
    auto it = index_.find(l);
    if (it == index_.end()) throw Error("unknown label '" + l + "'");
    return it->second;
  }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

struct TypingExample {
  AnnotatedText text;  // without markers
  Span target;
  std::vector<std::string> labels;
};

struct RelationExample {
  AnnotatedText text;
  Span head;
  Span tail;
  std::string label;
};

namespace detail {
inline std::size_t find_token(const AnnotatedText& at, TokenId id, const char* what) {
  auto it = std::find(at.tokens.begin(), at.tokens.end(), id);
  if (it == at.tokens.end()) throw Error(std::string("missing ") + what + " marker in input");
  return static_cast<std::size_t>(it - at.tokens.begin());
}
}  // namespace detail

/// Multi-label sigmoid head on the fused [ENT] vector.
class TypingHead {
 public:
  TypingHead() = default;
  explicit TypingHead(LabelSet labels, std::string prefix = "typing") : labels_(std::move(labels)), prefix_(std::move(prefix)) {}

  const LabelSet& labels() const { return labels_; }
  void init(ParamStore& s, Rng& rng, std::size_t text_dim) const { layers::init_linear(s, prefix_, text_dim, labels_.size(), rng); }

  static AnnotatedText prepare(const TypingExample& ex, const Vocabulary& v) {
    return insert_markers(ex.text, v, MarkerTask::entity_typing, {ex.target});
  }

  /// [1 x labels] logits for an already-marked text.
  Var logits(Tape& t, ParamStore& s, const Model& model, const AnnotatedText& marked) const {
    const std::size_t pos = detail::find_token(marked, model.world().vocab->ent(), "[ENT]");
    ModelOutput o = model.forward(t, s, model.input_for(marked));
    return layers::linear(t, s, prefix_, gather_rows(o.fused.tokens, {pos}));
  }

  std::vector<double> probabilities(ParamStore& s, const Model& model, const AnnotatedText& marked) const {
    Tape t(false);
    std::vector<double> p = logits(t, s, model, marked).value().values();
    for (double& x : p) x = 1.0 / (1.0 + std::exp(-x));
    return p;
  }

  Tensor targets(const TypingExample& ex) const {
    Tensor y = Tensor::zeros(1, labels_.size());
    for (const auto& l : ex.labels) y(0, labels_.id(l)) = 1.0;
    return y;
  }

 private:
  LabelSet labels_;
  std::string prefix_ = "typing";
};

/// Softmax head on concat([HD] vector, [TL] vector).
class RelationHead {
 public:
  RelationHead() = default;
  explicit RelationHead(LabelSet labels, std::string prefix = "relation") : labels_(std::move(labels)), prefix_(std::move(prefix)) {}

  const LabelSet& labels() const { return labels_; }
  void init(ParamStore& s, Rng& rng, std::size_t text_dim) const { layers::init_linear(s, prefix_, 2 * text_dim, labels_.size(), rng); }

  static AnnotatedText prepare(const RelationExample& ex, const Vocabulary& v) {
    return insert_markers(ex.text, v, MarkerTask::relation_clf, {ex.head, ex.tail});
  }

  /// The [HD]-then-[TL] feature row, [1 x 2 d_w].
  Var features(Tape& t, ParamStore& s, const Model& model, const AnnotatedText& marked) const {
    const std::size_t hd = detail::find_token(marked, model.world().vocab->hd(), "[HD]");
    const std::size_t tl = detail::find_token(marked, model.world().vocab->tl(), "[TL]");
    ModelOutput o = model.forward(t, s, model.input_for(marked));
    return concat_cols({gather_rows(o.fused.tokens, {hd}), gather_rows(o.fused.tokens, {tl})});
  }

  Var logits(Tape& t, ParamStore& s, const Model& model, const AnnotatedText& marked) const {
    return layers::linear(t, s, prefix_, features(t, s, model, marked));
  }

  std::vector<double> probabilities(ParamStore& s, const Model& model, const AnnotatedText& marked) const {
    Tape t(false);
    return kernels::softmax_rows(logits(t, s, model, marked).value()).values();
  }

 private:
  LabelSet labels_;
  std::string prefix_ = "relation";
};

struct FinetuneConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 8;
  AdamConfig adam{.lr = 1e-3};
  std::uint64_t seed = 0;
};

struct FinetuneLog {
  std::vector<double> loss;
};

namespace detail {

inline Var mean_of(std::vector<Var> terms) {
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return scale(total, 1.0 / static_cast<double>(terms.size()));
}

template <class LossFn>
FinetuneLog run_finetune(ParamStore& s, std::size_t n, const FinetuneConfig& cfg, LossFn loss_of) {
  if (n == 0) throw Error("fine-tuning needs at least one example");
  Rng rng = Rng::substream(cfg.seed, "finetune-batches");
  Adam adam(cfg.adam);
  FinetuneLog log;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t cursor = n;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> batch;
    while (batch.size() < std::min(cfg.batch_size, n)) {
      if (cursor == n) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    s.zero_grad();
    Tape t;
    std::vector<Var> terms;
    for (std::size_t i : batch) terms.push_back(loss_of(t, i));
    Var loss = mean_of(std::move(terms));
    t.backward(loss);
    adam.step(s);
    log.loss.push_back(loss.item());
  }
  return log;
}

}  // namespace detail

inline FinetuneLog finetune_typing(const Model& model, const TypingHead& head, ParamStore& s,
                                   const std::vector<TypingExample>& examples, const FinetuneConfig& cfg) {
  std::vector<AnnotatedText> marked;
  std::vector<Tensor> ys;
  for (const auto& ex : examples) {
    marked.push_back(TypingHead::prepare(ex, *model.world().vocab));
    ys.push_back(head.targets(ex));
  }
  return detail::run_finetune(s, examples.size(), cfg, [&](Tape& t, std::size_t i) {
    return bce_with_logits(head.logits(t, s, model, marked[i]), ys[i]);
  });
}

inline FinetuneLog finetune_relation(const Model& model, const RelationHead& head, ParamStore& s,
                                     const std::vector<RelationExample>& examples, const FinetuneConfig& cfg) {
  std::vector<AnnotatedText> marked;
  std::vector<std::size_t> ys;
  for (const auto& ex : examples) {
    marked.push_back(RelationHead::prepare(ex, *model.world().vocab));
    ys.push_back(head.labels().id(ex.label));
  }
  return detail::run_finetune(s, examples.size(), cfg, [&](Tape& t, std::size_t i) {
    return cross_entropy(head.logits(t, s, model, marked[i]), {ys[i]});
  });
}

struct ClassificationMetrics {
  std::size_t n = 0;
  double accuracy = 0.0;  // exact match for multi-label
  double precision = 0.0, recall = 0.0, f1 = 0.0;

  nlohmann::json to_json() const {
    return {{"n", n}, {"accuracy", accuracy}, {"precision", precision}, {"recall", recall}, {"f1", f1}};
  }
};

inline double f1_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

/// Exact-match accuracy and micro P/R/F1 over labels at threshold 0.5.
inline ClassificationMetrics evaluate_typing(const Model& model, const TypingHead& head, ParamStore& s,
                                             const std::vector<TypingExample>& examples) {
  ClassificationMetrics m;
  std::size_t exact = 0, tp = 0, fp = 0, fn = 0;
  for (const auto& ex : examples) {
    auto p = head.probabilities(s, model, TypingHead::prepare(ex, *model.world().vocab));
    Tensor y = head.targets(ex);
    bool all = true;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const bool pred = p[k] >= 0.5, gold = y(0, k) == 1.0;
      tp += pred && gold;
      fp += pred && !gold;
      fn += !pred && gold;
      all = all && pred == gold;
    }
    exact += all;
  }
  m.n = examples.size();
  if (m.n) m.accuracy = static_cast<double>(exact) / static_cast<double>(m.n);
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = f1_of(m.precision, m.recall);
  return m;
}

/// Accuracy plus macro-averaged P/R/F1 over gold-or-predicted classes.
inline ClassificationMetrics evaluate_relation(const Model& model, const RelationHead& head, ParamStore& s,
                                               const std::vector<RelationExample>& examples) {
  ClassificationMetrics m;
  const std::size_t C = head.labels().size();
  std::vector<std::size_t> tp(C, 0), fp(C, 0), fn(C, 0);
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    auto p = head.probabilities(s, model, RelationHead::prepare(ex, *model.world().vocab));
    const std::size_t pred = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    const std::size_t gold = head.labels().id(ex.label);
    if (pred == gold) {
      ++correct;
      ++tp[gold];
    } else {
      ++fp[pred];
      ++fn[gold];
    }
  }
  m.n = examples.size();
  if (m.n) m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n);
  std::size_t used = 0;
  for (std::size_t c = 0; c < C; ++c) {
    if (tp[c] + fp[c] + fn[c] == 0) continue;
    ++used;
    const double p = tp[c] + fp[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c]) : 0.0;
    const double r = tp[c] + fn[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fn[c]) : 0.0;
    m.precision += p;
    m.recall += r;
    m.f1 += f1_of(p, r);
  }
  if (used) {
    m.precision /= static_cast<double>(used);
    m.recall /= static_cast<double>(used);
    m.f1 /= static_cast<double>(used);
  }
  return m;
}

}  // namespace dkctx
