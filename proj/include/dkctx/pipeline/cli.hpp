// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dkctx/pipeline/stages.hpp"
#include "dkctx/synth/world.hpp"

namespace dkctx::cli {

namespace fs = std::filesystem;

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;
inline constexpr int kManifest = 3;

struct Options {
  std::string config, kg, corpus, out, checkpoint, vocab, data, gold;
  std::optional<std::uint64_t> seed;
  std::string K, mode, attention;
  std::optional<double> threshold;
  bool sweep = false;
  std::string task, target;  // finetune task, ablate target
  std::string sentence, mention;
};

inline std::string sibling(const std::string& of, const char* name) {
  return (fs::path(of).parent_path() / name).string();
}

inline std::string need(const std::string& v, const char* flag) {
  if (v.empty()) throw Error(std::string("missing required flag ") + flag);
  return v;
}

inline std::vector<std::size_t> parse_ks(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc{} || p != part.data() + part.size() || v == 0) throw Error("--K expects positive integers, got '" + s + "'");
    out.push_back(v);
  }
  if (out.empty()) throw Error("--K is empty");
  return out;
}

/// Defaults, then the config file, then flags.
inline RunConfig resolve_config(const Options& o, bool k_is_list = false) {
  RunConfig c;
  if (!o.config.empty()) apply_config_file(c, o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.K.empty() && !k_is_list) {
    auto ks = parse_ks(o.K);
    if (ks.size() != 1) throw Error("--K takes one value for this command");
    c.model.hops = ks[0];
  }
  if (!o.mode.empty()) c.model.mode = parse_pretrain_mode(o.mode);
  if (!o.attention.empty()) c.model.attention = parse_neighbor_attention(o.attention);
  c.validate();
  return c;
}

inline void diff_json(const nlohmann::json& a, const nlohmann::json& b, const std::string& path, std::vector<std::string>& out) {
  if (a.is_object() && b.is_object()) {
    for (auto it = a.begin(); it != a.end(); ++it)
      diff_json(it.value(), b.contains(it.key()) ? b[it.key()] : nlohmann::json(), path.empty() ? it.key() : path + "." + it.key(), out);
    return;
  }
  if (a != b) out.push_back(path + " (checkpoint " + a.dump() + ", requested " + b.dump() + ")");
}

/// Flags may not silently override what a checkpoint was trained with.
inline void check_flags_against(const RunConfig& stored, const Options& o) {
  if (!o.config.empty()) throw ManifestError("--config cannot be combined with a model checkpoint; its config is recorded in the manifest");
  RunConfig want = stored;
  if (o.seed) want.seed = *o.seed;
  if (!o.K.empty()) {
    auto ks = parse_ks(o.K);
    if (ks.size() != 1) throw Error("--K takes one value for this command");
    want.model.hops = ks[0];
  }
  if (!o.mode.empty()) want.model.mode = parse_pretrain_mode(o.mode);
  if (!o.attention.empty()) want.model.attention = parse_neighbor_attention(o.attention);
  std::vector<std::string> diffs;
  diff_json(stored.to_json(), want.to_json(), "", diffs);
  if (!diffs.empty()) {
    std::string msg = "config mismatch with checkpoint:";
    for (const auto& d : diffs) msg += " " + d + ";";
    msg.pop_back();
    throw ManifestError(msg);
  }
}

struct Inputs {
  KnowledgeGraph kg;
  Vocabulary vocab;
  std::vector<nlohmann::json> corpus;
};

inline Inputs load_inputs(const Options& o, bool with_corpus) {
  Inputs in;
  in.kg = load_triples(need(o.kg, "--kg"));
  std::string vocab = o.vocab;
  if (with_corpus) {
    in.corpus = read_jsonl(need(o.corpus, "--corpus"));
    if (vocab.empty()) vocab = sibling(o.corpus, "vocab.txt");
  }
  if (vocab.empty()) throw Error("missing required flag --vocab");
  in.vocab = Vocabulary::load(vocab);
  return in;
}

inline EmbeddingTable load_transe(const std::string& path, const KnowledgeGraph& kg, const RunConfig& cfg) {
  Checkpoint c = load_checkpoint(path);
  if (c.manifest.value("kind", "") != "transe")
    throw ManifestError("checkpoint '" + path + "' is not a TransE table (kind '" + c.manifest.value("kind", "?") + "')");
  check_manifest_hash(c.manifest, "kg_hash", kg.hash(), "graph");
  return embeddings_from_checkpoint(c, kg, cfg.model.kg_dim);
}

inline std::unique_ptr<Session> open_model(const Options& o, const Inputs& in) {
  Checkpoint c = load_checkpoint(need(o.checkpoint, "--checkpoint"));
  if (c.manifest.value("kind", "") == "model") check_flags_against(run_config_from_json(c.manifest.at("config")), o);
  return load_session(c, in.kg, in.vocab);
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create '" + dir + "': " + ec.message());
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write '" + path + "'");
  f << text;
}

inline nlohmann::json cmd_gen_synth(const Options& o) {
  SynthConfig sc;
  if (!o.config.empty()) sc.seed = resolve_config(o).seed;
  if (o.seed) sc.seed = *o.seed;
  SyntheticWorld w = generate_world(sc);
  const std::string out = need(o.out, "--out");
  w.write(out);
  std::size_t two_hop = 0;
  for (const auto& r : w.relation_gold) two_hop += r.at("two_hop").get<bool>();
  return make_report("gen_synth", {{"config", sc.to_json()},
                                   {"entities", w.kg.num_entities()},
                                   {"relations", w.kg.num_relations()},
                                   {"triples", w.kg.num_triples()},
                                   {"sentences", w.corpus.size()},
                                   {"selection_mentions", w.selection_gold.size()},
                                   {"relation_examples", w.relation_gold.size()},
                                   {"two_hop_examples", two_hop},
                                   {"vocab_size", w.vocab.size()},
                                   {"kg_hash", w.kg.hash()},
                                   {"vocab_hash", w.vocab.hash()}});
}

inline nlohmann::json cmd_build_kg(const Options& o) {
  LoadReport rep;
  KnowledgeGraph kg = load_triples(need(o.kg, "--kg"), &rep);
  const std::string out = need(o.out, "--out");
  ensure_dir(out);
  write_triples(out + "/kg.tsv", kg);
  nlohmann::json body = rep.to_json();
  body["kg_hash"] = kg.hash();
  return make_report("build_kg", body);
}

inline nlohmann::json cmd_train_transe(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  KnowledgeGraph kg = load_triples(need(o.kg, "--kg"));
  TransEOutcome r = stage_train_transe(kg, cfg);
  const std::string out = need(o.out, "--out");
  ensure_dir(out);
  save_embeddings(out + "/transe.ckpt", r.table, kg, cfg.seed);
  return r.report;
}

inline nlohmann::json cmd_pretrain(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  Inputs in = load_inputs(o, true);
  Session s(in.kg, in.vocab, load_transe(need(o.checkpoint, "--checkpoint"), in.kg, cfg), cfg);
  PretrainOutcome p = stage_pretrain(s, load_texts(in.corpus, in.vocab, in.kg, "train"));
  const std::string out = need(o.out, "--out");
  ensure_dir(out);
  save_checkpoint(out + "/model.ckpt", model_checkpoint(s, "pretrain"));
  write_jsonl(out + "/pretrain_log.jsonl", p.log);
  return p.report;
}

inline nlohmann::json cmd_finetune(const Options& o) {
  Inputs in = load_inputs(o, true);
  auto s = open_model(o, in);
  nlohmann::json report;
  if (o.task == "typing") {
    report = stage_finetune_typing(*s, in.corpus);
  } else {
    const std::string data = o.data.empty() ? sibling(o.corpus, "relation_gold.jsonl") : o.data;
    report = stage_finetune_relation(*s, read_jsonl(data));
  }
  const std::string out = need(o.out, "--out");
  ensure_dir(out);
  save_checkpoint(out + "/model.ckpt", model_checkpoint(*s, "finetune_" + o.task));
  return report;
}

inline nlohmann::json cmd_rank_triples(const Options& o, std::string* table) {
  Inputs in = load_inputs(o, !o.corpus.empty());
  auto s = open_model(o, in);
  Gazetteer gaz;
  for (const auto& n : in.kg.entity_names()) gaz.add(n, n);
  AnnotatedText at = tokenize(need(o.sentence, "--sentence"), in.vocab, gaz);
  nlohmann::json report = stage_rank_triples(*s, at, need(o.mention, "--mention"), table);
  if (!o.out.empty()) {
    ensure_dir(o.out);
    write_text(o.out + "/rank_triples.txt", *table);
  }
  return report;
}

inline nlohmann::json cmd_eval_selection(const Options& o) {
  if (o.threshold && o.sweep) throw Error("--threshold and --threshold-sweep are exclusive");
  Inputs in = load_inputs(o, true);
  auto s = open_model(o, in);
  const std::string gold = o.gold.empty() ? sibling(o.corpus, "selection_gold.jsonl") : o.gold;
  return stage_eval_selection(*s, in.corpus, read_jsonl(gold), {.threshold = o.threshold, .sweep = o.sweep});
}

inline nlohmann::json cmd_ablate(const Options& o) {
  const bool khop = o.target == "khop";
  const RunConfig cfg = resolve_config(o, khop);
  Inputs in = load_inputs(o, true);
  EmbeddingTable table = load_transe(need(o.checkpoint, "--checkpoint"), in.kg, cfg);
  const auto relations = read_jsonl(o.data.empty() ? sibling(o.corpus, "relation_gold.jsonl") : o.data);
  const auto selection = khop ? std::vector<nlohmann::json>{}
                              : read_jsonl(o.gold.empty() ? sibling(o.corpus, "selection_gold.jsonl") : o.gold);
  AblationData d{&in.kg, &in.vocab, &table, &in.corpus, &selection, &relations};
  if (khop) return stage_ablate_khop(d, cfg, o.K.empty() ? std::vector<std::size_t>{1, 2} : parse_ks(o.K));
  return stage_ablate_attention(d, cfg);
}

inline nlohmann::json error_json(const char* kind, const std::string& message) {
  return {{"error", kind}, {"message", message}};
}

/// Parses argv, runs one subcommand and prints its JSON report on `out`.
/// Failures go to `err` as one JSON object, with a nonzero exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"dkctx: dynamic knowledge context pipeline"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "key = value config file");
    c->add_option("--seed", o.seed, "root seed");
    c->add_option("--out", o.out, "output directory");
  };
  auto model_flags = [&](CLI::App* c) {
    c->add_option("--K", o.K, "context hops");
    c->add_option("--mode", o.mode, "bert_style or roberta_style");
    c->add_option("--attention", o.attention, "semantic or mean_pool");
  };
  auto data_flags = [&](CLI::App* c) {
    c->add_option("--kg", o.kg, "triples file");
    c->add_option("--corpus", o.corpus, "annotated corpus (jsonl)");
    c->add_option("--vocab", o.vocab, "vocabulary (default: vocab.txt next to the corpus)");
    c->add_option("--checkpoint", o.checkpoint, "input checkpoint");
  };

  auto* gen = app.add_subcommand("gen-synth", "write the synthetic world");
  common(gen);
  auto* build = app.add_subcommand("build-kg", "load, check and normalize a triples file");
  common(build);
  build->add_option("--kg", o.kg, "triples file");
  auto* transe = app.add_subcommand("train-transe", "train static embeddings");
  common(transe);
  model_flags(transe);
  transe->add_option("--kg", o.kg, "triples file");
  auto* pre = app.add_subcommand("pretrain", "masked LM + entity alignment pretraining");
  common(pre);
  model_flags(pre);
  data_flags(pre);
  auto* ft = app.add_subcommand("finetune", "fine-tune a task head");
  common(ft);
  model_flags(ft);
  data_flags(ft);
  ft->add_option("task", o.task, "typing or relation")->required()->check(CLI::IsMember({"typing", "relation"}));
  ft->add_option("--data", o.data, "relation examples (default: relation_gold.jsonl next to the corpus)");
  auto* rank = app.add_subcommand("rank-triples", "triple importance for one mention");
  common(rank);
  model_flags(rank);
  data_flags(rank);
  rank->add_option("--sentence", o.sentence, "raw sentence; entity names are linked by exact match");
  rank->add_option("--mention", o.mention, "entity to rank triples for");
  auto* sel = app.add_subcommand("eval-selection", "triple selection P/R/F1 on the test split");
  common(sel);
  model_flags(sel);
  data_flags(sel);
  sel->add_option("--gold", o.gold, "selection gold (default: selection_gold.jsonl next to the corpus)");
  sel->add_option("--threshold", o.threshold, "fixed selection threshold");
  sel->add_flag("--threshold-sweep", o.sweep, "pick the threshold on dev");
  auto* abl = app.add_subcommand("ablate", "khop or attention ablation");
  common(abl);
  model_flags(abl);
  data_flags(abl);
  abl->add_option("target", o.target, "khop or attention")->required()->check(CLI::IsMember({"khop", "attention"}));
  abl->add_option("--data", o.data, "relation examples");
  abl->add_option("--gold", o.gold, "selection gold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << error_json("usage", e.what()).dump() << '\n';
    return kUsage;
  }

  try {
    nlohmann::json report;
    std::string table;
    if (gen->parsed()) report = cmd_gen_synth(o);
    else if (build->parsed()) report = cmd_build_kg(o);
    else if (transe->parsed()) report = cmd_train_transe(o);
    else if (pre->parsed()) report = cmd_pretrain(o);
    else if (ft->parsed()) report = cmd_finetune(o);
    else if (rank->parsed()) report = cmd_rank_triples(o, &table);
    else if (sel->parsed()) report = cmd_eval_selection(o);
    else report = cmd_ablate(o);
    const std::string text = report.dump(2) + "\n";
    if (!o.out.empty()) {
      ensure_dir(o.out);
      write_text(o.out + "/" + report.at("kind").get<std::string>() + ".json", text);
    }
    out << text;
    return kOk;
  } catch (const ManifestError& e) {
    err << error_json("manifest_mismatch", e.what()).dump() << '\n';
    return kManifest;
  } catch (const ParseError& e) {
    err << error_json("parse_error", e.what()).dump() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    err << error_json("error", e.what()).dump() << '\n';
    return kFailure;
  }
}

}  // namespace dkctx::cli
