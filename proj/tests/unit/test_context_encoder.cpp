// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include "dkctx/numerics/grad_check.hpp"
#include "dkctx/sgnn/sgnn.hpp"
#include "oracles.hpp"

using namespace dkctx;
using Catch::Matchers::ContainsSubstring;

namespace {

std::vector<double> rand_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return v;
}

Tensor rand_tensor(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  return Tensor({r, c}, rand_vec(rng, r * c, scale));
}

double max_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

EmbeddingTable random_table(Rng& rng, const KnowledgeGraph& kg, std::size_t d) {
  return {d, rand_tensor(rng, kg.num_entities(), d, 0.5), rand_tensor(rng, kg.num_relations(), d, 0.5)};
}

std::vector<oracle::SgnnLayer> oracle_layers(const SGnn& g, const ParamStore& s) {
  std::vector<oracle::SgnnLayer> out;
  for (std::size_t i = 0; i < g.config().layers; ++i)
    out.push_back({&s.get(g.name(i, "W")).value, &s.get(g.name(i, "Wq")).value, &s.get(g.name(i, "bq")).value,
                   &s.get(g.name(i, "Wk")).value, &s.get(g.name(i, "bk")).value});
  return out;
}

std::vector<double> encode_one(const SGnn& g, ParamStore& s, const RawContext& ctx, const EmbeddingTable& table,
                               const std::vector<double>& sent) {
  Tape t(false);
  ContextEncoding enc = g.encode(t, s, {ctx}, table, t.constant(Tensor::row(sent)));
  return enc.mentions[0].value().values();
}

}  // namespace

TEST_CASE("neighbor messages", "[context_encoder]") {
  Rng rng(1);
  const std::size_t d = 4;
  Tensor W = rand_tensor(rng, 2 * d, d);
  auto n = rand_vec(rng, d), prev = rand_vec(rng, d), r = rand_vec(rng, d);
  std::vector<double> zero(d, 0.0);
  CHECK(sgnn::neighbor_message(W, n, zero, prev, Direction::incoming) ==
        sgnn::neighbor_message(W, n, zero, prev, Direction::outgoing));

  Tensor block = Tensor::zeros(2 * d, d);
  for (std::size_t i = 0; i < d; ++i) block(i, i) = 1.0;
  auto m = sgnn::neighbor_message(block, n, r, prev, Direction::incoming);
  for (std::size_t i = 0; i < d; ++i) CHECK(m[i] == Catch::Approx(n[i] + r[i]).margin(1e-15));

  for (int trial = 0; trial < 20; ++trial) {
    W = rand_tensor(rng, 2 * d, d);
    n = rand_vec(rng, d);
    r = rand_vec(rng, d);
    prev = rand_vec(rng, d);
    for (Direction dir : {Direction::incoming, Direction::outgoing}) {
      const double sg = dir == Direction::incoming ? 1.0 : -1.0;
      auto got = sgnn::neighbor_message(W, n, r, prev, dir);
      for (std::size_t o = 0; o < d; ++o) {
        double want = 0.0;
        for (std::size_t c = 0; c < d; ++c) want += (n[c] + sg * r[c]) * W(c, o) + prev[c] * W(d + c, o);
        CHECK(std::abs(got[o] - want) < 1e-12);
      }
    }
    // flipping the stored direction while negating r changes nothing
    std::vector<double> neg_r(r);
    for (double& x : neg_r) x = -x;
    CHECK(max_diff(sgnn::neighbor_message(W, n, r, prev, Direction::incoming),
                   sgnn::neighbor_message(W, n, neg_r, prev, Direction::outgoing)) < 1e-15);
  }
  CHECK_THROWS_AS(sgnn::neighbor_message(W, n, std::vector<double>(3), prev, Direction::incoming), ShapeError);
}

TEST_CASE("sentence query", "[context_encoder]") {
  Rng rng(2);
  Tensor Wq = rand_tensor(rng, 6, 3), bq = Tensor::zeros(1, 3);
  CHECK(sgnn::query(Wq, bq, std::vector<double>(6, 0.0)) == std::vector<double>(3, 0.0));
  auto big = sgnn::query(Wq, rand_tensor(rng, 1, 3), rand_vec(rng, 6, 1e3));
  for (double x : big) CHECK(std::abs(x) <= 1.0);
  auto small = sgnn::query(Wq, rand_tensor(rng, 1, 3), rand_vec(rng, 6, 50));
  for (double x : small) CHECK(std::abs(x) < 1.0 + 1e-15);
  for (int trial = 0; trial < 10; ++trial) {
    bq = rand_tensor(rng, 1, 3);
    auto s = rand_vec(rng, 6);
    auto got = sgnn::query(Wq, bq, s);
    for (std::size_t a = 0; a < 3; ++a) {
      double z = bq(0, a);
      for (std::size_t i = 0; i < 6; ++i) z += s[i] * Wq(i, a);
      CHECK(std::abs(got[a] - std::tanh(z)) < 1e-12);
    }
  }
  CHECK_THROWS_AS(sgnn::query(Wq, bq, std::vector<double>(5)), ShapeError);
}

TEST_CASE("reverse keys", "[context_encoder]") {
  Rng rng(3);
  Tensor Wk = rand_tensor(rng, 4, 3), bk = rand_tensor(rng, 1, 3);
  for (int trial = 0; trial < 10; ++trial) {
    auto r = rand_vec(rng, 4);
    std::vector<double> neg(r);
    for (double& x : neg) x = -x;
    CHECK(max_diff(sgnn::key(Wk, bk, r, Direction::outgoing), sgnn::key(Wk, bk, neg, Direction::incoming)) < 1e-15);
    auto got = sgnn::key(Wk, bk, r, Direction::incoming);
    for (std::size_t a = 0; a < 3; ++a) {
      double want = bk(0, a);
      for (std::size_t c = 0; c < 4; ++c) want += r[c] * Wk(c, a);
      CHECK(std::abs(got[a] - want) < 1e-12);
    }
  }
  std::vector<double> zero(4, 0.0);
  CHECK(sgnn::key(Wk, bk, zero, Direction::incoming) == bk.values());
  CHECK(sgnn::key(Wk, bk, zero, Direction::outgoing) == bk.values());
}

TEST_CASE("attend over neighbor messages", "[context_encoder]") {
  std::vector<std::vector<double>> msgs{{1.0, 2.0}}, keys{{0.3, -0.7}};
  std::vector<double> q{0.9, 0.4};
  auto one = sgnn::attend(msgs, keys, q);
  CHECK(one.weights == std::vector<double>{1.0});
  CHECK(one.output == msgs[0]);

  msgs = {{1.0, 0.0}, {0.0, 1.0}, {2.0, 2.0}};
  keys = {{1.0, 2.0}, {-3.0, 0.5}, {0.0, 0.0}};
  auto uniform = sgnn::attend(msgs, keys, std::vector<double>{0.0, 0.0});
  CHECK(std::abs(uniform.output[0] - 1.0) < 1e-15);
  CHECK(std::abs(uniform.output[1] - 1.0) < 1e-15);

  msgs = {{1.0}, {0.0}};
  keys = {{std::log(3.0)}, {0.0}};
  auto two = sgnn::attend(msgs, keys, std::vector<double>{1.0});
  CHECK(std::abs(two.weights[0] - 0.75) < 1e-15);
  CHECK(std::abs(two.weights[1] - 0.25) < 1e-15);
  CHECK(std::abs(two.output[0] - 0.75) < 1e-15);

  CHECK_THROWS_WITH(sgnn::attend({}, {}, q), ContainsSubstring("empty"));
}

TEST_CASE("context encoding of isolated and single-neighbor entities", "[context_encoder]") {
  KnowledgeGraph kg = parse_triples_string("n\tr\te\n");
  kg.add_entity("alone");
  Rng rng(4);
  const std::size_t d = 3;
  EmbeddingTable table = random_table(rng, kg, d);
  SGnn g({.kg_dim = d, .text_dim = 5, .layers = 1});
  ParamStore s;
  g.init(s, rng);
  auto sent = rand_vec(rng, 5);

  RawContext iso = raw_context(kg, kg.entity_id("alone"), 1);
  Tape t(false);
  ContextEncoding enc = g.encode(t, s, {iso}, table, t.constant(Tensor::row(sent)));
  CHECK(enc.isolated == std::vector<bool>{true});
  CHECK(enc.mentions[0].value().values() == table.entity_vectors.row_copy(kg.entity_id("alone")).values());

  Tensor& W = s.get(g.name(0, "W")).value;
  W.fill(0.0);
  for (std::size_t i = 0; i < d; ++i) W(i, i) = 1.0;
  RawContext ctx = raw_context(kg, kg.entity_id("e"), 1);
  auto out = encode_one(g, s, ctx, table, sent);
  for (std::size_t i = 0; i < d; ++i)
    CHECK(std::abs(out[i] - (table.entity_vectors(0, i) + table.relation_vectors(0, i))) < 1e-12);

  SGnn wrong({.kg_dim = 4, .text_dim = 5, .layers = 1});
  Tape t2(false);
  CHECK_THROWS_AS(wrong.encode(t2, s, {ctx}, table, t2.constant(Tensor::row(sent))), ShapeError);
  EmbeddingTable short_table{d, Tensor::zeros(1, d), table.relation_vectors};
  Tape t3(false);
  CHECK_THROWS_WITH(g.encode(t3, s, {ctx}, short_table, t3.constant(Tensor::row(sent))), ContainsSubstring("missing embedding"));
}

TEST_CASE("two-hop information reaches the center after two layers", "[context_encoder]") {
  KnowledgeGraph kg = parse_triples_string("a\tr\tb\nb\ts\tc\n");
  Rng rng(5);
  EmbeddingTable table = random_table(rng, kg, 4);
  SGnn g({.kg_dim = 4, .text_dim = 3, .layers = 2});
  ParamStore s;
  g.init(s, rng);
  auto sent = rand_vec(rng, 3);
  RawContext ctx = raw_context(kg, kg.entity_id("a"), 2);
  auto base = encode_one(g, s, ctx, table, sent);
  EmbeddingTable ablated = table;
  for (double& v : ablated.entity_vectors.row_span(kg.entity_id("c"))) v = 0.0;
  CHECK(max_diff(base, encode_one(g, s, ctx, ablated, sent)) > 1e-6);

  SGnn shallow({.kg_dim = 4, .text_dim = 3, .layers = 1});
  ParamStore s1;
  Rng r1(5);
  shallow.init(s1, r1);
  CHECK(max_diff(encode_one(shallow, s1, ctx, table, sent), encode_one(shallow, s1, ctx, ablated, sent)) == 0.0);
}

TEST_CASE("context encoding matches a plain-loop oracle on random graphs", "[context_encoder]") {
  Rng rng(6);
  for (int g_i = 0; g_i < 15; ++g_i) {
    KnowledgeGraph kg = oracle::random_graph(rng, 30, 60, 4);
    const std::size_t d = 4, K = 1 + rng.below(2);
    EmbeddingTable table = random_table(rng, kg, d);
    SGnn g({.kg_dim = d, .text_dim = 5, .attn_dim = 3, .layers = K});
    ParamStore s;
    g.init(s, rng);
    auto sent = rand_vec(rng, 5);
    for (int c = 0; c < 4; ++c) {
      const EntityId m = static_cast<EntityId>(rng.below(kg.num_entities()));
      RawContext ctx = raw_context(kg, m, K, HopOptions::uncapped());
      auto got = encode_one(g, s, ctx, table, sent);
      auto want = oracle::sgnn_center(kg, ctx.entities(), ctx.context_triples, m, table.entity_vectors,
                                      table.relation_vectors, sent, oracle_layers(g, s));
      REQUIRE(max_diff(got, want) < 1e-10);
    }
  }
}

TEST_CASE("context encoding is invariant to neighbor order", "[context_encoder]") {
  Rng rng(7);
  KnowledgeGraph kg = oracle::random_graph(rng, 25, 80, 3);
  EmbeddingTable table = random_table(rng, kg, 5);
  SGnn g({.kg_dim = 5, .text_dim = 4, .layers = 2});
  ParamStore s;
  g.init(s, rng);
  auto sent = rand_vec(rng, 4);
  for (EntityId m = 0; m < kg.num_entities(); m += 3) {
    RawContext ctx = raw_context(kg, m, 2, HopOptions::uncapped());
    RawContext shuffled = ctx;
    for (auto& [e, list] : shuffled.neighbor_lists) rng.shuffle(list);
    CHECK(max_diff(encode_one(g, s, ctx, table, sent), encode_one(g, s, shuffled, table, sent)) < 1e-9);
  }
}

TEST_CASE("per-node attention weights are distributions", "[context_encoder]") {
  Rng rng(8);
  KnowledgeGraph kg = oracle::random_graph(rng, 25, 80, 3);
  EmbeddingTable table = random_table(rng, kg, 4);
  for (NeighborAttention mode : {NeighborAttention::semantic, NeighborAttention::mean_pool}) {
    SGnn g({.kg_dim = 4, .text_dim = 4, .layers = 2, .attention = mode});
    ParamStore s;
    g.init(s, rng);
    std::vector<RawContext> ctxs;
    for (EntityId m = 0; m < 5; ++m) ctxs.push_back(raw_context(kg, m, 2, HopOptions::uncapped()));
    Tape t(false);
    ContextEncoding enc = g.encode(t, s, ctxs, table, t.constant(Tensor::row(rand_vec(rng, 4))), true);
    CHECK(enc.mentions.size() == 5);
    for (std::size_t c = 0; c < ctxs.size(); ++c)
      for (const Tensor& w : enc.weights[c]) {
        std::map<std::size_t, double> totals;
        for (std::size_t j = 0; j < w.rows(); ++j) {
          CHECK(w(j, 0) >= 0.0);
          CHECK(w(j, 0) <= 1.0);
          totals[enc.edge_targets[c][j]] += w(j, 0);
        }
        for (const auto& [node, sum] : totals) CHECK(std::abs(sum - 1.0) < 1e-6);
      }
  }
}

TEST_CASE("context encoder gradients match finite differences", "[context_encoder]") {
  Rng rng(9);
  KnowledgeGraph kg = parse_triples_string("a\tr\tb\nb\ts\tc\nc\tr\ta\nd\ts\ta\nb\tt\td\ne\tr\tc\n");
  EmbeddingTable table = random_table(rng, kg, 4);
  for (bool residual : {false, true}) {
    SGnn g({.kg_dim = 4, .text_dim = 5, .attn_dim = 3, .layers = 2, .center_residual = residual});
    ParamStore s;
    g.init(s, rng);
    s.add("sent", rand_tensor(rng, 1, 5));
    std::vector<RawContext> ctxs{raw_context(kg, 0, 2), raw_context(kg, 3, 2)};
    Tensor w = rand_tensor(rng, 2, 4);
    auto f = [&](Tape& t, ParamStore& ps) {
      ContextEncoding enc = g.encode(t, ps, ctxs, table, t.param(ps, "sent"));
      return sum(mul(enc.stacked(), t.constant(w)));
    };
    GradCheckReport rep = grad_check(f, s);
    INFO("residual " << residual << " max rel error " << rep.max_rel_error);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("triple ranking", "[context_encoder]") {
  KnowledgeGraph kg = parse_triples_string(
      "ada\tborn_in\tlondon\n"
      "ada\tstudied\tmath\n"
      "ada\tworks_for\tacme\n"
      "bob\tfriend_of\tada\n");
  kg.add_entity("hermit");
  Rng rng(10);
  EmbeddingTable table = random_table(rng, kg, 6);
  SGnn g({.kg_dim = 6, .text_dim = 8, .layers = 1});
  ParamStore s;
  g.init(s, rng);
  RawContext ctx = raw_context(kg, kg.entity_id("ada"), 1);

  TripleRanking rk = g.rank_triples(s, ctx, table, rand_vec(rng, 8, 3.0));
  REQUIRE(rk.scores.size() == 4);
  double total = 0.0;
  for (std::size_t i = 0; i < rk.scores.size(); ++i) {
    total += rk.scores[i].weight;
    if (i) CHECK(rk.scores[i - 1].weight >= rk.scores[i].weight);
  }
  CHECK(std::abs(total - 1.0) < 1e-12);
  CHECK_FALSE(rk.warning);

  // q = 0: uniform weights, ordered by triple id
  ParamStore zero = s;
  zero.get(g.name(0, "Wq")).value.fill(0.0);
  zero.get(g.name(0, "bq")).value.fill(0.0);
  rk = g.rank_triples(zero, ctx, table, rand_vec(rng, 8));
  for (std::size_t i = 0; i < rk.scores.size(); ++i) {
    CHECK(std::abs(rk.scores[i].weight - 0.25) < 1e-15);
    if (i) CHECK(rk.scores[i - 1].triple < rk.scores[i].triple);
  }

  const std::string table_text = rk.to_table(kg);
  CHECK_THAT(table_text, ContainsSubstring("25.0%"));
  CHECK_THAT(table_text, ContainsSubstring("london"));
  CHECK_THAT(table_text, ContainsSubstring("born_in"));
  nlohmann::json j = rk.to_json(kg);
  CHECK(j["scores"].size() == 4);
  CHECK(j["scores"][0].contains("importance_pct"));

  TripleRanking none = g.rank_triples(s, raw_context(kg, kg.entity_id("hermit"), 1), table, rand_vec(rng, 8));
  CHECK(none.scores.empty());
  CHECK(none.warning);
}

TEST_CASE("different sentences select different triples", "[context_encoder]") {
  KnowledgeGraph kg = parse_triples_string(
      "ada\tborn_in\tlondon\n"
      "ada\tstudied\tmath\n"
      "ada\tworks_for\tacme\n");
  Rng rng(11);
  EmbeddingTable table = random_table(rng, kg, 6);
  SGnn g({.kg_dim = 6, .text_dim = 8, .layers = 1});
  ParamStore s;
  g.init(s, rng);
  RawContext ctx = raw_context(kg, kg.entity_id("ada"), 1);
  TripleRanking first = g.rank_triples(s, ctx, table, rand_vec(rng, 8, 3.0));
  bool differs = false;
  for (int attempt = 0; attempt < 200 && !differs; ++attempt) {
    TripleRanking other = g.rank_triples(s, ctx, table, rand_vec(rng, 8, 3.0));
    differs = other.scores.front().triple != first.scores.front().triple;
  }
  CHECK(differs);
}

TEST_CASE("triple ranking reads the top layer of a deeper stack", "[context_encoder]") {
  Rng rng(12);
  KnowledgeGraph kg = oracle::random_graph(rng, 20, 60, 3);
  EmbeddingTable table = random_table(rng, kg, 4);
  SGnn g({.kg_dim = 4, .text_dim = 6, .layers = 2});
  ParamStore s;
  g.init(s, rng);
  for (EntityId m = 0; m < 6; ++m) {
    RawContext ctx = raw_context(kg, m, 2, HopOptions::uncapped());
    if (ctx.neighbors_of(m).empty()) continue;
    const auto sent = rand_vec(rng, 6, 2.0);
    Tape t(false);
    ContextEncoding enc = g.encode(t, s, {ctx}, table, t.constant(Tensor::row(sent)), true);
    const std::size_t center = [&] {
      const auto ents = ctx.entities();
      return static_cast<std::size_t>(std::find(ents.begin(), ents.end(), m) - ents.begin());
    }();
    std::vector<double> top;
    const Tensor& w = enc.weights[0][1];
    for (std::size_t j = 0; j < w.rows(); ++j)
      if (enc.edge_targets[0][j] == center) top.push_back(w(j, 0));
    std::vector<double> ranked;
    for (const auto& sc : g.rank_triples(s, ctx, table, sent).scores) ranked.push_back(sc.weight);
    std::sort(top.begin(), top.end(), std::greater<>());
    CHECK(max_diff(top, ranked) < 1e-12);
  }
}
