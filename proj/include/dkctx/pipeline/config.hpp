// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "dkctx/embed/transe.hpp"
#include "dkctx/model/model.hpp"

namespace dkctx {

inline constexpr int kReportSchemaVersion = 1;

/// Everything a pipeline run depends on. Defaults are sized for a laptop
/// run over the synthetic world, not for the encoder defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model = [] {
    ModelConfig m;
    m.text_dim = 32;
    m.layers = 2;
    m.heads = 2;
    m.max_seq_len = 32;
    m.kg_dim = 16;
    m.hops = 2;
    m.aggregators = 2;
    m.center_residual = true;
    return m;
  }();
  std::size_t transe_epochs = 200;
  double transe_lr = 0.5;
  double transe_margin = 1.0;
  std::size_t transe_negatives = 4;
  std::size_t pretrain_steps = 1500;
  std::size_t pretrain_batch = 8;
  double pretrain_lr = 2e-3;
  std::size_t finetune_steps = 300;
  std::size_t finetune_batch = 8;
  double finetune_lr = 3e-3;

  TransEConfig transe() const {
    return {.dim = model.kg_dim, .margin = transe_margin, .lr = transe_lr, .epochs = transe_epochs,
            .neg_per_pos = transe_negatives, .seed = seed};
  }

  void validate() const {
    model.validate();
    if (transe_epochs == 0 || pretrain_steps == 0 || pretrain_batch == 0 || finetune_steps == 0 || finetune_batch == 0)
      throw Error("config: epochs, steps and batch sizes must be positive");
    if (!(transe_lr > 0) || !(pretrain_lr > 0) || !(finetune_lr > 0)) throw Error("config: learning rates must be positive");
  }

  /// Applies one key = value setting. Unknown keys are errors.
  void set(const std::string& key, const std::string& value) {
    auto as_size = [&] {
      std::size_t v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc{} || p != value.data() + value.size()) throw Error("config: '" + key + "' expects an unsigned integer, got '" + value + "'");
      return v;
    };
    auto as_double = [&] {
      try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception&) {
        throw Error("config: '" + key + "' expects a number, got '" + value + "'");
      }
    };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw Error("config: '" + key + "' expects true or false, got '" + value + "'");
    };
    if (key == "seed") seed = as_size();
    else if (key == "text_dim" || key == "d_w") model.text_dim = as_size();
    else if (key == "layers" || key == "L") model.layers = as_size();
    else if (key == "heads" || key == "H") model.heads = as_size();
    else if (key == "max_seq_len") model.max_seq_len = as_size();
    else if (key == "kg_dim" || key == "d_k") model.kg_dim = as_size();
    else if (key == "attn_dim" || key == "d_a") model.attn_dim = as_size();
    else if (key == "K" || key == "hops") model.hops = as_size();
    else if (key == "aggregators" || key == "P") model.aggregators = as_size();
    else if (key == "entity_heads") model.entity_heads = as_size();
    else if (key == "max_neighbors_per_hop") model.max_neighbors_per_hop = as_size();
    else if (key == "attention") model.attention = parse_neighbor_attention(value);
    else if (key == "scaled_logits") model.scaled_logits = as_bool();
    else if (key == "center_residual") model.center_residual = as_bool();
    else if (key == "mode") model.mode = parse_pretrain_mode(value);
    else if (key == "transe_epochs") transe_epochs = as_size();
    else if (key == "transe_lr") transe_lr = as_double();
    else if (key == "transe_margin") transe_margin = as_double();
    else if (key == "transe_negatives") transe_negatives = as_size();
    else if (key == "pretrain_steps") pretrain_steps = as_size();
    else if (key == "pretrain_batch") pretrain_batch = as_size();
    else if (key == "pretrain_lr") pretrain_lr = as_double();
    else if (key == "finetune_steps") finetune_steps = as_size();
    else if (key == "finetune_batch") finetune_batch = as_size();
    else if (key == "finetune_lr") finetune_lr = as_double();
    else throw Error("config: unknown key '" + key + "'");
  }

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"model", model.to_json()},
            {"transe", {{"epochs", transe_epochs}, {"lr", transe_lr}, {"margin", transe_margin}, {"negatives", transe_negatives}}},
            {"pretrain", {{"steps", pretrain_steps}, {"batch", pretrain_batch}, {"lr", pretrain_lr}}},
            {"finetune", {{"steps", finetune_steps}, {"batch", finetune_batch}, {"lr", finetune_lr}}}};
  }

  std::string hash() const { return fnv1a_hex(to_json().dump()); }
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// key = value lines; '#' starts a comment. Later lines override earlier ones.
inline std::map<std::string, std::string> parse_kv(std::istream& in, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(origin + ": expected 'key = value'", n);
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw ParseError(origin + ": empty key", n);
    out[key] = value;
  }
  return out;
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  for (const auto& [k, v] : parse_kv(in, path)) cfg.set(k, v);
}

}  // namespace dkctx
