// Model tests: config serialization, encoder shapes, caption generator
// semantics (teacher echo, pad-after-eos, determinism), both attention
// mechanisms, rollout structure under every decoder variant, forcing, and
// the discriminator head.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "langtraj/model.hpp"
#include "langtraj/tape.hpp"

using namespace langtraj;
using annotate::Token;
using model::Model;
using model::ModelConfig;
using model::RolloutOptions;

namespace {

geom::Trajectory line(double speed, int n, double x0 = 0.0, double y = 0.0,
                      double heading = 0.0) {
  geom::Trajectory t;
  t.dt = 0.1;
  for (int i = 0; i < n; ++i)
    t.points.push_back({x0 + speed * 0.1 * i * std::cos(heading),
                        y + speed * 0.1 * i * std::sin(heading)});
  return t;
}

data::AgentTrack track(const geom::Trajectory& full, const std::string& id) {
  data::AgentTrack t;
  t.agent_id = id;
  t.past.dt = t.future.dt = 0.1;
  for (int i = 0; i < 20; ++i) t.past.points.push_back(full.points[i]);
  for (int i = 20; i < 50; ++i) t.future.points.push_back(full.points[i]);
  t.past_mask.assign(20, 1);
  t.future_mask.assign(30, 1);
  return t;
}

data::PredictionExample make_example(int n_agents = 2) {
  data::PredictionExample ex;
  ex.example_id = "m#ego";
  ex.scene_id = "m";
  ex.agents.push_back(track(line(5.0, 50), "ego"));
  for (int k = 1; k < n_agents; ++k) {
    ex.agents.push_back(track(line(4.0, 50, 6.0 * k, 3.5 * k), "n" + std::to_string(k)));
    ex.neighbor_order.push_back("n" + std::to_string(k));
  }
  ex.map.centerlines.push_back({1, {{-10.0, 0.0}, {60.0, 0.0}}});
  ex.map.centerlines.push_back({2, {{-10.0, 3.5}, {60.0, 3.5}}});
  return ex;
}

Model make_model(uint64_t seed = 7, ModelConfig cfg = {}) {
  Model m(cfg);
  Rng rng(seed);
  m.init_params(rng);
  return m;
}

std::vector<annotate::Token> forced_caption(std::vector<Token> content, int max_tokens) {
  auto c = annotate::make_caption(content, max_tokens);
  return c.tokens;
}

double sum_of(const double* v, int n) {
  double s = 0;
  for (int i = 0; i < n; ++i) s += v[i];
  return s;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("model config json roundtrip, unknown keys, validation") {
  ModelConfig cfg;
  cfg.encoder_hidden = 16;
  cfg.decoder_hidden = 16;  // must track encoder_hidden, h0 seeds the decoder
  cfg.decoder = model::DecoderKind::Multihead;
  cfg.no_attention = true;
  auto back = ModelConfig::from_json_text(cfg.to_json_text());
  CHECK(back.decoder_hidden == 16);
  CHECK(back.decoder == model::DecoderKind::Multihead);
  CHECK(back.no_attention);
  CHECK(back.encoder_hidden == cfg.encoder_hidden);

  CHECK_THROWS_AS(ModelConfig::from_json_text("{\"encoder_hiden\": 8}"), ConfigError);

  ModelConfig bad;
  bad.max_agents = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  ModelConfig drop;
  drop.dropout = 1.5;
  CHECK_THROWS_AS(drop.validate(), ConfigError);

  CHECK(model::decoder_kind_from_name(model::decoder_kind_name(model::DecoderKind::Ours)) ==
        model::DecoderKind::Ours);
  CHECK(model::decoder_kind_from_name("vanilla") == model::DecoderKind::Vanilla);
  CHECK_THROWS_AS(model::decoder_kind_from_name("transformer"), ConfigError);
}

TEST_CASE("parameter init is deterministic in the seed") {
  Model a = make_model(123), b = make_model(123), c = make_model(124);
  std::string pa = "/tmp/langtraj_pa.ckpt", pb = "/tmp/langtraj_pb.ckpt",
              pc = "/tmp/langtraj_pc.ckpt";
  save_checkpoint(a.gen_params(), pa);
  save_checkpoint(b.gen_params(), pb);
  save_checkpoint(c.gen_params(), pc);
  CHECK(slurp(pa) == slurp(pb));
  CHECK(slurp(pa) != slurp(pc));
  std::remove(pa.c_str());
  std::remove(pb.c_str());
  std::remove(pc.c_str());
}

TEST_CASE("encoder pads agent slots up to max_agents") {
  Model m = make_model();
  auto ex = make_example(2);
  diff::Tape t;
  auto b = m.bind(t);
  auto enc = m.encode_agents(b, ex);

  CHECK(enc.n_agents == 2);
  REQUIRE(enc.h0.size() == 5);
  REQUIRE(enc.agent_mask.size() == 5);
  CHECK(enc.agent_mask[0] == 1.0);
  CHECK(enc.agent_mask[1] == 1.0);
  CHECK(enc.agent_mask[2] == 0.0);
  CHECK(enc.agent_mask[4] == 0.0);
  CHECK(enc.map_emb.size() == 2);

  for (int a = 0; a < 5; ++a) {
    REQUIRE(t.rows(enc.h0[a]) * t.cols(enc.h0[a]) == m.config().encoder_hidden);
    const double* v = t.value(enc.h0[a]);
    for (int i = 0; i < m.config().encoder_hidden; ++i) {
      CHECK(std::isfinite(v[i]));
      if (a >= 2) CHECK(v[i] == 0.0);  // padding slots are zero states
    }
  }
}

TEST_CASE("caption generator echoes the teacher and pads after eos") {
  Model m = make_model();
  auto ex = make_example(2);
  const int M = m.config().max_tokens;

  SUBCASE("teacher mode returns the teacher tokens and one logit row each") {
    diff::Tape t;
    auto b = m.bind(t);
    auto enc = m.encode_agents(b, ex);
    std::vector<double> zv(m.config().noise_dim, 0.1);
    auto z = t.leaf(zv, false);
    std::vector<int> teacher;
    for (Token tok : forced_caption({Token::MoveFast, Token::LaneKeep}, M))
      teacher.push_back(static_cast<int>(tok));
    Rng gumbel(5);
    auto roll = m.generate_caption(b, enc.h0[0], z, &teacher, gumbel, true);
    CHECK(roll.tokens == teacher);
    REQUIRE(roll.logits.size() == static_cast<size_t>(M));
    for (auto id : roll.logits)
      CHECK(t.rows(id) * t.cols(id) == annotate::kVocabSize);

    std::vector<int> wrong(M - 1, 0);
    CHECK_THROWS_AS(m.generate_caption(b, enc.h0[0], z, &wrong, gumbel, true), InvalidInput);
  }

  SUBCASE("sampled captions are deterministic and structurally valid") {
    auto run = [&](uint64_t gseed) {
      diff::Tape t;
      auto b = m.bind(t);
      auto enc = m.encode_agents(b, ex);
      std::vector<double> zv(m.config().noise_dim, 0.1);
      auto z = t.leaf(zv, false);
      Rng gumbel(gseed);
      return m.generate_caption(b, enc.h0[0], z, nullptr, gumbel, true).tokens;
    };
    auto t1 = run(5), t2 = run(5), t3 = run(6);
    CHECK(t1 == t2);
    CHECK(t1 != t3);  // a different gumbel stream changes the draw

    for (uint64_t seed = 0; seed < 40; ++seed) {
      auto toks = run(seed);
      REQUIRE(toks.size() == static_cast<size_t>(M));
      bool eos_seen = false;
      for (int id : toks) {
        CHECK(id >= 0);
        CHECK(id < annotate::kVocabSize);
        if (eos_seen) CHECK(id == static_cast<int>(Token::Pad));
        if (id == static_cast<int>(Token::Eos)) eos_seen = true;
      }
    }
  }
}

TEST_CASE("agent attention weighs slots only for agent-reference tokens") {
  Model m = make_model();
  diff::Tape t;
  auto b = m.bind(t);
  std::vector<double> mask = {1, 1, 1, 0, 0};

  std::vector<double> emb(m.config().token_embed, 0.3);
  auto y = t.leaf(emb, false);

  CHECK(m.agent_attention_weights(b, y, static_cast<int>(Token::MoveFast), mask) ==
        diff::kNoNode);
  CHECK(m.agent_attention_weights(b, y, static_cast<int>(Token::Pad), mask) == diff::kNoNode);

  auto w = m.agent_attention_weights(b, y, static_cast<int>(Token::Agent2), mask);
  REQUIRE(w != diff::kNoNode);
  const double* wv = t.value(w);
  CHECK(sum_of(wv, 5) == doctest::Approx(1.0).epsilon(1e-12));
  for (int i = 0; i < 3; ++i) CHECK(wv[i] > 0.0);
  CHECK(wv[3] == 0.0);
  CHECK(wv[4] == 0.0);

  // the weights are a function of the embedding alone: a second call with the
  // same embedding reproduces them exactly
  diff::Tape t2;
  auto b2 = m.bind(t2);
  auto y2 = t2.leaf(emb, false);
  auto w2 = m.agent_attention_weights(b2, y2, static_cast<int>(Token::Agent2), mask);
  const double* wv2 = t2.value(w2);
  for (int i = 0; i < 5; ++i) CHECK(wv[i] == doctest::Approx(wv2[i]).epsilon(1e-15));
}

TEST_CASE("token attention masks pads and disappears under no_attention") {
  auto ex = make_example(2);

  SUBCASE("weights sum to one over non-pad positions") {
    Model m = make_model();
    const int M = m.config().max_tokens;
    diff::Tape t;
    auto b = m.bind(t);
    auto enc = m.encode_agents(b, ex);
    auto roll = m.embed_caption(b, forced_caption({Token::MoveFast, Token::LaneKeep}, M));
    auto out = m.token_attend(b, roll.embeds, roll.tokens, enc.h0[0]);
    REQUIRE(out.weights != diff::kNoNode);
    const double* wv = t.value(out.weights);
    CHECK(sum_of(wv, M) == doctest::Approx(1.0).epsilon(1e-12));
    // layout: <bos> MoveFast LaneKeep <eos> then pads
    for (int i = 0; i < 4; ++i) CHECK(wv[i] > 0.0);
    for (int i = 4; i < M; ++i) CHECK(wv[i] == 0.0);
    CHECK(t.rows(out.context) * t.cols(out.context) == m.config().token_embed);
  }

  SUBCASE("no_attention returns the plain re-encoding") {
    ModelConfig cfg;
    cfg.no_attention = true;
    Model m = make_model(7, cfg);
    diff::Tape t;
    auto b = m.bind(t);
    auto enc = m.encode_agents(b, ex);
    auto roll = m.embed_caption(b, forced_caption({Token::MoveFast}, cfg.max_tokens));
    auto out = m.token_attend(b, roll.embeds, roll.tokens, enc.h0[0]);
    CHECK(out.weights == diff::kNoNode);
    CHECK(out.context != diff::kNoNode);
  }
}

TEST_CASE("rollout produces well-formed samples per decoder kind") {
  auto ex = make_example(3);

  SUBCASE("ours: captions, traces, absolute futures") {
    Model m = make_model();
    const int M = m.config().max_tokens;
    diff::Tape t;
    auto b = m.bind(t);
    RolloutOptions opt;
    opt.n_samples = 2;
    Rng z(10), g(20);
    auto res = m.rollout(b, ex, opt, z, g);

    REQUIRE(res.samples.size() == 2);
    for (const auto& s : res.samples) {
      REQUIRE(s.agents.size() == 3);
      for (const auto& a : s.agents) {
        REQUIRE(a.future.size() == 30);
        for (const auto& p : a.future) {
          CHECK(std::isfinite(p.x));
          CHECK(std::isfinite(p.y));
        }
        CHECK(a.caption.tokens.size() == static_cast<size_t>(M));
        CHECK(a.caption.z.size() == static_cast<size_t>(m.config().noise_dim));
        REQUIRE(a.trace.token_weights.size() == 30);
        for (const auto& row : a.trace.token_weights) {
          REQUIRE(row.size() == static_cast<size_t>(M));
          CHECK(sum_of(row.data(), M) == doctest::Approx(1.0).epsilon(1e-9));
        }
        CHECK(a.trace.agent_weights.size() == static_cast<size_t>(M));
      }
    }
    // futures start from the last observed position, not from the origin
    auto& fut = res.samples[0].agents[0].future;
    CHECK(std::hypot(fut[0].x - ex.agents[0].past.points.back().x,
                     fut[0].y - ex.agents[0].past.points.back().y) < 5.0);
  }

  SUBCASE("vanilla and multihead run without captions") {
    for (auto kind : {model::DecoderKind::Vanilla, model::DecoderKind::Multihead}) {
      ModelConfig cfg;
      cfg.decoder = kind;
      Model m = make_model(7, cfg);
      diff::Tape t;
      auto b = m.bind(t);
      RolloutOptions opt;
      opt.n_samples = 1;
      Rng z(10), g(20);
      auto res = m.rollout(b, ex, opt, z, g);
      REQUIRE(res.samples.size() == 1);
      for (const auto& a : res.samples[0].agents) {
        CHECK(a.future.size() == 30);
        CHECK(a.caption.tokens.empty());
        CHECK(a.trace.token_weights.empty());
      }
    }
  }

  SUBCASE("no_attention leaves no token-weight trace") {
    ModelConfig cfg;
    cfg.no_attention = true;
    Model m = make_model(7, cfg);
    diff::Tape t;
    auto b = m.bind(t);
    RolloutOptions opt;
    opt.n_samples = 1;
    Rng z(10), g(20);
    auto res = m.rollout(b, ex, opt, z, g);
    CHECK(res.samples[0].agents[0].trace.token_weights.empty());
    CHECK(res.samples[0].agents[0].future.size() == 30);
  }
}

TEST_CASE("rollout is deterministic in its rng streams") {
  Model m = make_model();
  auto ex = make_example(2);
  auto run = [&](uint64_t zs, uint64_t gs) {
    diff::Tape t;
    auto b = m.bind(t);
    RolloutOptions opt;
    opt.n_samples = 2;
    Rng z(zs), g(gs);
    return m.rollout(b, ex, opt, z, g);
  };
  auto r1 = run(1, 2), r2 = run(1, 2), r3 = run(3, 2);

  for (size_t s = 0; s < 2; ++s)
    for (size_t a = 0; a < 2; ++a) {
      CHECK(r1.samples[s].agents[a].caption.tokens == r2.samples[s].agents[a].caption.tokens);
      for (size_t i = 0; i < 30; ++i) {
        CHECK(r1.samples[s].agents[a].future[i].x == r2.samples[s].agents[a].future[i].x);
        CHECK(r1.samples[s].agents[a].future[i].y == r2.samples[s].agents[a].future[i].y);
      }
    }

  // different noise moves the target's future
  bool differs = false;
  for (size_t i = 0; i < 30; ++i)
    if (r1.samples[0].agents[0].future[i].x != r3.samples[0].agents[0].future[i].x)
      differs = true;
  CHECK(differs);
}

TEST_CASE("forced captions override sampling for the right agents") {
  Model m = make_model();
  auto ex = make_example(2);
  const int M = m.config().max_tokens;
  auto forced = forced_caption({Token::TurnLeft, Token::TurnLeft}, M);
  std::vector<int> forced_ids;
  for (Token tok : forced) forced_ids.push_back(static_cast<int>(tok));

  SUBCASE("forced_target pins only the target") {
    diff::Tape t;
    auto b = m.bind(t);
    RolloutOptions opt;
    opt.n_samples = 1;
    opt.forced_target = forced;
    Rng z(4), g(8);
    auto res = m.rollout(b, ex, opt, z, g);
    CHECK(res.samples[0].agents[0].caption.tokens == forced_ids);
    CHECK(res.samples[0].agents[0].caption.logits.empty());
    CHECK(res.samples[0].agents[1].caption.tokens != forced_ids);
    CHECK_FALSE(res.samples[0].agents[1].caption.logits.empty());
  }

  SUBCASE("forced_all pins every agent") {
    diff::Tape t;
    auto b = m.bind(t);
    RolloutOptions opt;
    opt.n_samples = 1;
    opt.forced_all = forced;
    Rng z(4), g(8);
    auto res = m.rollout(b, ex, opt, z, g);
    for (const auto& a : res.samples[0].agents) CHECK(a.caption.tokens == forced_ids);
  }

  SUBCASE("a forced caption of the wrong length is rejected") {
    diff::Tape t;
    auto b = m.bind(t);
    RolloutOptions opt;
    opt.forced_target = std::vector<Token>{Token::Bos, Token::Eos};
    Rng z(4), g(8);
    CHECK_THROWS_AS(m.rollout(b, ex, opt, z, g), InvalidInput);
  }
}

TEST_CASE("discriminator outputs a probability") {
  Model m = make_model();
  std::vector<double> h0(m.config().encoder_hidden, 0.2);
  std::vector<geom::Vec2> disp(30, {0.5, 0.0});
  double p1 = m.discriminate_prob(h0, disp);
  double p2 = m.discriminate_prob(h0, disp);
  CHECK(p1 > 0.0);
  CHECK(p1 < 1.0);
  CHECK(p1 == p2);

  std::vector<geom::Vec2> other(30, {-0.5, 0.3});
  CHECK(m.discriminate_prob(h0, other) != p1);
}
