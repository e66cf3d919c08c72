// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkctx/model/pretraining.hpp"
#include "dkctx/pipeline/config.hpp"
#include "dkctx/tasks/heads.hpp"
#include "dkctx/tasks/selection.hpp"

namespace dkctx {

inline nlohmann::json make_report(const std::string& kind, nlohmann::json body = nlohmann::json::object()) {
  body["kind"] = kind;
  body["schema_version"] = kReportSchemaVersion;
  return body;
}

/// A model bound to its graph, vocabulary and static embeddings. Pinned in
/// memory because the model keeps pointers into it.
class Session {
 public:
  Session(const KnowledgeGraph& kg, const Vocabulary& vocab, EmbeddingTable table, RunConfig cfg)
      : cfg_(std::move(cfg)), table_(std::move(table)), model_(cfg_.model, World{&kg, &table_, &vocab}, cfg_.seed) {}
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const RunConfig& config() const { return cfg_; }
  const Model& model() const { return model_; }
  const EmbeddingTable& table() const { return table_; }
  const KnowledgeGraph& kg() const { return *model_.world().kg; }
  const Vocabulary& vocab() const { return *model_.world().vocab; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  nlohmann::json& heads() { return heads_; }
  const nlohmann::json& heads() const { return heads_; }

  void init_params() {
    Rng rng = Rng::substream(cfg_.seed, "init");
    model_.init(store_, rng);
  }

 private:
  RunConfig cfg_;
  EmbeddingTable table_;
  Model model_;
  ParamStore store_;
  nlohmann::json heads_ = nlohmann::json::object();  // label sets of attached task heads
};

// ---- data --------------------------------------------------------------

inline bool in_split(const nlohmann::json& rec, const std::string& split) {
  return split.empty() || rec.value("split", "") == split;
}

/// Checks every mention names a graph entity, then converts.
inline std::vector<AnnotatedText> load_texts(const std::vector<nlohmann::json>& recs, const Vocabulary& vocab,
                                             const KnowledgeGraph& kg, const std::string& split = "") {
  std::vector<AnnotatedText> out;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (!in_split(recs[i], split)) continue;
    AnnotatedText at = annotated_from_json(recs[i], vocab);
    for (const Mention& m : at.mentions)
      if (!kg.find_entity(m.entity))
        throw Error("record " + std::to_string(i + 1) + ": mention '" + m.entity + "' is not a graph entity");
    out.push_back(std::move(at));
  }
  return out;
}

inline LabelSet typing_labels(const std::vector<nlohmann::json>& recs) {
  std::set<std::string> all;
  for (const auto& r : recs)
    for (const auto& m : r.at("mentions"))
      if (m.contains("types"))
        for (const auto& t : m["types"]) all.insert(t.get<std::string>());
  if (all.empty()) throw Error("corpus mentions carry no \"types\"");
  return LabelSet({all.begin(), all.end()});
}

inline std::vector<TypingExample> typing_examples(const std::vector<nlohmann::json>& recs, const Vocabulary& vocab,
                                                  const std::string& split) {
  std::vector<TypingExample> out;
  for (const auto& r : recs) {
    if (!in_split(r, split)) continue;
    AnnotatedText at = annotated_from_json(r, vocab);
    for (const auto& m : r.at("mentions")) {
      if (!m.contains("types")) continue;
      out.push_back({at, {m.at("start").get<std::size_t>(), m.at("end").get<std::size_t>()},
                     m["types"].get<std::vector<std::string>>()});
    }
  }
  return out;
}

inline LabelSet relation_labels(const std::vector<nlohmann::json>& recs) {
  std::set<std::string> all;
  for (const auto& r : recs) all.insert(r.at("label").get<std::string>());
  if (all.empty()) throw Error("no relation examples");
  return LabelSet({all.begin(), all.end()});
}

inline Span span_of(const nlohmann::json& j) { return {j.at("start").get<std::size_t>(), j.at("end").get<std::size_t>()}; }

inline std::vector<RelationExample> relation_examples(const std::vector<nlohmann::json>& recs, const Vocabulary& vocab,
                                                      const std::string& split) {
  std::vector<RelationExample> out;
  for (const auto& r : recs)
    if (in_split(r, split))
      out.push_back({annotated_from_json(r, vocab), span_of(r.at("head")), span_of(r.at("tail")), r.at("label").get<std::string>()});
  return out;
}

inline std::vector<SelectionGold> selection_gold(const std::vector<nlohmann::json>& recs, const std::string& split) {
  std::vector<SelectionGold> out;
  for (const auto& r : recs)
    if (in_split(r, split)) out.push_back(SelectionGold::from_json(r));
  return out;
}

// ---- checkpoints -------------------------------------------------------

inline Checkpoint model_checkpoint(const Session& s, const std::string& stage) {
  Checkpoint c = checkpoint_from(s.store());
  c.manifest = {{"kind", "model"},
                {"stage", stage},
                {"seed", s.config().seed},
                {"config", s.config().to_json()},
                {"config_hash", s.config().hash()},
                {"kg_hash", s.kg().hash()},
                {"vocab_hash", s.vocab().hash()},
                {"transe_dim", s.table().dim},
                {"heads", s.heads()}};
  for (auto& [name, t] : embeddings_checkpoint(s.table(), s.kg(), s.config().seed).tensors) c.tensors.emplace("transe/" + name, t);
  return c;
}

inline void check_manifest_hash(const nlohmann::json& m, const char* key, const std::string& actual, const char* what) {
  const std::string want = m.value(key, "");
  if (want != actual)
    throw ManifestError(std::string(key) + " mismatch: checkpoint was built against " + what + " " + want + ", input is " + actual);
}

inline void check_model_manifest(const nlohmann::json& m, const KnowledgeGraph& kg, const Vocabulary& vocab) {
  if (m.value("kind", "") != "model") throw ManifestError("checkpoint is not a model checkpoint (kind '" + m.value("kind", "?") + "')");
  check_manifest_hash(m, "kg_hash", kg.hash(), "graph");
  check_manifest_hash(m, "vocab_hash", vocab.hash(), "vocabulary");
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  c.seed = j.at("seed");
  c.model = ModelConfig::from_json(j.at("model"));
  c.transe_epochs = j.at("transe").at("epochs");
  c.transe_lr = j.at("transe").at("lr");
  c.transe_margin = j.at("transe").at("margin");
  c.transe_negatives = j.at("transe").at("negatives");
  c.pretrain_steps = j.at("pretrain").at("steps");
  c.pretrain_batch = j.at("pretrain").at("batch");
  c.pretrain_lr = j.at("pretrain").at("lr");
  c.finetune_steps = j.at("finetune").at("steps");
  c.finetune_batch = j.at("finetune").at("batch");
  c.finetune_lr = j.at("finetune").at("lr");
  return c;
}

/// Rebuilds a session from a model checkpoint after checking it was made
/// for this graph and vocabulary.
inline std::unique_ptr<Session> load_session(const Checkpoint& c, const KnowledgeGraph& kg, const Vocabulary& vocab) {
  check_model_manifest(c.manifest, kg, vocab);
  RunConfig cfg = run_config_from_json(c.manifest.at("config"));
  if (cfg.hash() != c.manifest.value("config_hash", ""))
    throw ManifestError("config_hash mismatch: manifest config does not hash to the recorded value");
  Checkpoint emb;
  emb.manifest = {{"kind", "transe"}, {"dim", c.manifest.at("transe_dim")}};
  for (const auto& [name, t] : c.tensors)
    if (name.rfind("transe/", 0) == 0) emb.tensors.emplace(name.substr(7), t);
  auto s = std::make_unique<Session>(kg, vocab, embeddings_from_checkpoint(emb, kg, cfg.model.kg_dim), cfg);
  s->init_params();
  restore_params(s->store(), c, true);
  for (const auto& [name, t] : c.tensors)
    if (name.rfind("transe/", 0) != 0 && !s->store().contains(name)) s->store().add(name, t);
  s->heads() = c.manifest.value("heads", nlohmann::json::object());
  return s;
}

// ---- stages ------------------------------------------------------------

struct TransEOutcome {
  EmbeddingTable table;
  nlohmann::json report;
};

inline TransEOutcome stage_train_transe(const KnowledgeGraph& kg, const RunConfig& cfg) {
  TransEStats stats;
  EmbeddingTable table = train_transe(kg, cfg.transe(), &stats);
  const double rank = mean_tail_rank(table, kg);
  const double chance = (static_cast<double>(kg.num_entities()) + 1.0) / 2.0;
  return {std::move(table),
          make_report("train_transe", {{"seed", cfg.seed},
                                       {"dim", cfg.model.kg_dim},
                                       {"epochs", cfg.transe_epochs},
                                       {"kg_hash", kg.hash()},
                                       {"mean_rank", rank},
                                       {"random_rank", chance},
                                       {"improvement", 1.0 - rank / chance},
                                       {"first_epoch_loss", stats.epoch_loss.front()},
                                       {"last_epoch_loss", stats.epoch_loss.back()}})};
}

struct PretrainOutcome {
  nlohmann::json report;
  std::vector<nlohmann::json> log;  // one record per step
};

inline PretrainOutcome stage_pretrain(Session& s, const std::vector<AnnotatedText>& texts) {
  const RunConfig& cfg = s.config();
  if (texts.empty()) throw Error("pretrain: empty corpus");
  s.init_params();
  Rng sampling = Rng::substream(cfg.seed, "sampling");
  Rng masking = Rng::substream(cfg.seed, "masking");
  std::vector<PretrainSample> samples = build_samples(texts, cfg.model.mode, s.vocab(), sampling);
  Adam adam({.lr = cfg.pretrain_lr, .warmup_steps = 20, .clip_norm = 1.0});
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  PretrainOutcome out;
  for (std::size_t step = 0; step < cfg.pretrain_steps; ++step) {
    std::vector<PretrainSample> batch;
    while (batch.size() < std::min(cfg.pretrain_batch, samples.size())) {
      if (cursor == order.size()) {
        sampling.shuffle(order);
        cursor = 0;
      }
      batch.push_back(samples[order[cursor++]]);
    }
    PreparedBatch b = prepare_batch(s.model(), batch, masking);
    s.store().zero_grad();
    Tape t;
    LossParts<Var> parts = pretrain_losses(t, s.store(), s.model(), b);
    Var loss = total_loss(parts, cfg.model.mode);
    t.backward(loss);
    adam.step(s.store());
    nlohmann::json rec{{"step", step}, {"loss", loss.item()}, {"mlm", parts.mlm->item()}, {"dea", parts.dea->item()}};
    if (parts.nsp) rec["nsp"] = parts.nsp->item();
    out.log.push_back(std::move(rec));
  }
  auto tail_mean = [&](std::size_t from, std::size_t to) {
    double sum = 0.0;
    for (std::size_t i = from; i < to; ++i) sum += out.log[i]["loss"].get<double>();
    return sum / static_cast<double>(to - from);
  };
  const std::size_t n = out.log.size(), w = std::min<std::size_t>(20, n);
  out.report = make_report("pretrain", {{"seed", cfg.seed},
                                        {"config_hash", cfg.hash()},
                                        {"mode", to_string(cfg.model.mode)},
                                        {"attention", to_string(cfg.model.attention)},
                                        {"K", cfg.model.hops},
                                        {"steps", n},
                                        {"sentences", texts.size()},
                                        {"dea_candidates", cfg.model.masking.dea_negatives + 1},
                                        {"initial_loss_mean", tail_mean(0, w)},
                                        {"final_loss_mean", tail_mean(n - w, n)}});
  return out;
}

/// Top-layer triple importance for every mention of the split's sentences.
inline std::vector<ScoredMention> score_mentions(Session& s, const std::vector<nlohmann::json>& corpus, const std::string& split) {
  std::vector<ScoredMention> out;
  for (const auto& rec : corpus) {
    if (!in_split(rec, split)) continue;
    AnnotatedText at = annotated_from_json(rec, s.vocab());
    Tape t(false);
    TextEncoding enc = s.model().text_encoder().encode(t, s.store(), at);
    const Tensor cls = enc.cls.value();
    for (const Mention& m : at.mentions) {
      const RawContext& ctx = s.model().context(s.kg().entity_id(m.entity));
      TripleRanking r = s.model().sgnn().rank_triples(s.store(), ctx, s.table(), cls.row_span(0));
      out.push_back({rec.at("id").get<std::string>(), m.entity, std::move(r.scores)});
    }
  }
  return out;
}

/// Importance report for one sentence and mention.
inline nlohmann::json stage_rank_triples(Session& s, const AnnotatedText& at, const std::string& mention, std::string* table = nullptr) {
  auto it = std::find_if(at.mentions.begin(), at.mentions.end(), [&](const Mention& m) { return m.entity == mention; });
  if (it == at.mentions.end()) throw Error("rank-triples: '" + mention + "' is not a mention of the sentence");
  Tape t(false);
  const Tensor cls = s.model().text_encoder().encode(t, s.store(), at).cls.value();
  const RawContext& ctx = s.model().context(s.kg().entity_id(mention));
  TripleRanking r = s.model().sgnn().rank_triples(s.store(), ctx, s.table(), cls.row_span(0));
  if (table) *table = r.to_table(s.kg());
  double total = 0.0;
  for (const auto& x : r.scores) total += 100.0 * x.weight;
  nlohmann::json j = r.to_json(s.kg());
  return make_report("rank_triples", {{"sentence", at.text()},
                                      {"mention", mention},
                                      {"attention", to_string(s.config().model.attention)},
                                      {"ranking", j},
                                      {"importance_total_pct", total}});
}

struct SelectionOptions {
  std::optional<double> threshold;  // fixed threshold on the test split
  bool sweep = false;               // pick the threshold on dev instead
};

inline nlohmann::json stage_eval_selection(Session& s, const std::vector<nlohmann::json>& corpus,
                                           const std::vector<nlohmann::json>& gold, const SelectionOptions& opt) {
  auto test_scored = score_mentions(s, corpus, "test");
  auto test_gold = selection_gold(gold, "test");
  nlohmann::json body{{"attention", to_string(s.config().model.attention)},
                      {"K", s.config().model.hops},
                      {"split", "test"},
                      {"mentions", test_gold.size()}};
  const ThresholdSweep test_sweep = sweep_threshold(test_scored, test_gold, default_threshold_grid());
  body["best_f1"] = test_sweep.best.f1;
  body["best"] = test_sweep.best.to_json();
  if (opt.sweep) {
    const ThresholdSweep dev = sweep_threshold(score_mentions(s, corpus, "dev"), selection_gold(gold, "dev"), default_threshold_grid());
    body["threshold_source"] = "dev_sweep";
    body["threshold"] = dev.best.threshold;
    body["dev"] = dev.to_json();
    body["test"] = eval_selection(test_scored, test_gold, dev.best.threshold).to_json();
  } else {
    const double th = opt.threshold.value_or(0.5);
    body["threshold_source"] = opt.threshold ? "flag" : "default";
    body["threshold"] = th;
    body["test"] = eval_selection(test_scored, test_gold, th).to_json();
  }
  return make_report("eval_selection", body);
}

inline FinetuneConfig finetune_config(const RunConfig& cfg, const char* task) {
  return {.steps = cfg.finetune_steps, .batch_size = cfg.finetune_batch, .adam = {.lr = cfg.finetune_lr},
          .seed = Rng::substream(cfg.seed, task).next_u64()};
}

inline nlohmann::json stage_finetune_typing(Session& s, const std::vector<nlohmann::json>& corpus) {
  TypingHead head(typing_labels(corpus));
  Rng rng = Rng::substream(s.config().seed, "typing-head");
  if (!s.store().contains("typing/w")) head.init(s.store(), rng, s.config().model.text_dim);
  const auto train = typing_examples(corpus, s.vocab(), "train");
  FinetuneLog log = finetune_typing(s.model(), head, s.store(), train, finetune_config(s.config(), "finetune-typing"));
  s.heads()["typing"] = head.labels().names();
  return make_report("finetune_typing", {{"labels", head.labels().names()},
                                         {"train_examples", train.size()},
                                         {"final_loss", log.loss.back()},
                                         {"dev", evaluate_typing(s.model(), head, s.store(), typing_examples(corpus, s.vocab(), "dev")).to_json()},
                                         {"test", evaluate_typing(s.model(), head, s.store(), typing_examples(corpus, s.vocab(), "test")).to_json()}});
}

inline nlohmann::json stage_finetune_relation(Session& s, const std::vector<nlohmann::json>& data) {
  RelationHead head(relation_labels(data));
  Rng rng = Rng::substream(s.config().seed, "relation-head");
  if (!s.store().contains("relation/w")) head.init(s.store(), rng, s.config().model.text_dim);
  const auto train = relation_examples(data, s.vocab(), "train");
  FinetuneLog log = finetune_relation(s.model(), head, s.store(), train, finetune_config(s.config(), "finetune-relation"));
  s.heads()["relation"] = head.labels().names();
  return make_report("finetune_relation", {{"labels", head.labels().names()},
                                           {"K", s.config().model.hops},
                                           {"train_examples", train.size()},
                                           {"final_loss", log.loss.back()},
                                           {"dev", evaluate_relation(s.model(), head, s.store(), relation_examples(data, s.vocab(), "dev")).to_json()},
                                           {"test", evaluate_relation(s.model(), head, s.store(), relation_examples(data, s.vocab(), "test")).to_json()}});
}

// ---- ablations ---------------------------------------------------------

/// Inputs shared by every ablation arm.
struct AblationData {
  const KnowledgeGraph* kg = nullptr;
  const Vocabulary* vocab = nullptr;
  const EmbeddingTable* table = nullptr;
  const std::vector<nlohmann::json>* corpus = nullptr;
  const std::vector<nlohmann::json>* selection = nullptr;
  const std::vector<nlohmann::json>* relations = nullptr;
};

inline std::unique_ptr<Session> pretrained_session(const AblationData& d, const RunConfig& cfg, nlohmann::json* pretrain_report) {
  auto s = std::make_unique<Session>(*d.kg, *d.vocab, *d.table, cfg);
  PretrainOutcome p = stage_pretrain(*s, load_texts(*d.corpus, *d.vocab, *d.kg, "train"));
  if (pretrain_report) *pretrain_report = p.report;
  return s;
}

/// Relation classification with each context radius.
inline nlohmann::json stage_ablate_khop(const AblationData& d, const RunConfig& base, const std::vector<std::size_t>& ks) {
  if (ks.empty()) throw Error("ablate khop: no K values");
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t k : ks) {
    RunConfig cfg = base;
    cfg.model.hops = k;
    cfg.validate();
    nlohmann::json pre;
    auto s = pretrained_session(d, cfg, &pre);
    nlohmann::json ft = stage_finetune_relation(*s, *d.relations);
    rows.push_back({{"K", k},
                    {"pretrain_final_loss", pre["final_loss_mean"]},
                    {"dev_accuracy", ft["dev"]["accuracy"]},
                    {"test_accuracy", ft["test"]["accuracy"]},
                    {"test_macro_f1", ft["test"]["f1"]}});
  }
  return make_report("ablate_khop", {{"seed", base.seed}, {"task", "relation"}, {"rows", rows}});
}

/// Triple selection with semantic attention against mean pooling.
inline nlohmann::json stage_ablate_attention(const AblationData& d, const RunConfig& base) {
  nlohmann::json rows = nlohmann::json::array();
  for (NeighborAttention a : {NeighborAttention::semantic, NeighborAttention::mean_pool}) {
    RunConfig cfg = base;
    cfg.model.attention = a;
    nlohmann::json pre;
    auto s = pretrained_session(d, cfg, &pre);
    nlohmann::json ev = stage_eval_selection(*s, *d.corpus, *d.selection, {.threshold = std::nullopt, .sweep = true});
    rows.push_back({{"attention", to_string(a)},
                    {"pretrain_final_loss", pre["final_loss_mean"]},
                    {"best_f1", ev["best_f1"]},
                    {"dev_threshold", ev["threshold"]},
                    {"test_f1_at_dev_threshold", ev["test"]["f1"]}});
  }
  return make_report("ablate_attention", {{"seed", base.seed}, {"task", "selection"}, {"rows", rows}});
}

}  // namespace dkctx
