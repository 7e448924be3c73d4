// Annotation pipeline tests: vocabulary rules, each detector against
// hand-built kinematics, composition rules, and the script library as a
// zero-jitter oracle (every expected token must be recovered).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "langtraj/annotate.hpp"
#include "langtraj/scene.hpp"
#include "langtraj/synth.hpp"
#include "langtraj/vocab.hpp"

using namespace langtraj;
using annotate::AnnotateConfig;
using annotate::Caption;
using annotate::Token;
using annotate::TokenInterval;

namespace {

geom::Trajectory traj_from(std::vector<geom::Vec2> pts, double dt = 0.1) {
  geom::Trajectory t;
  t.points = std::move(pts);
  t.dt = dt;
  return t;
}

// constant-speed straight line along +x
geom::Trajectory line_x(double speed, int n, double x0 = 0.0, double y = 0.0) {
  std::vector<geom::Vec2> pts;
  for (int i = 0; i < n; ++i) pts.push_back({x0 + speed * 0.1 * i, y});
  return traj_from(std::move(pts));
}

geom::KinematicProfile flat_profile(int n, double speed, double accel = 0.0) {
  geom::KinematicProfile p;
  p.speed.assign(n, speed);
  p.accel.assign(n, accel);
  p.heading.assign(n, 0.0);
  p.yaw_rate.assign(n, 0.0);
  p.dt = 0.1;
  return p;
}

data::AgentTrack track_from(const geom::Trajectory& full, const std::string& id) {
  data::AgentTrack t;
  t.agent_id = id;
  t.past.dt = t.future.dt = full.dt;
  int n = static_cast<int>(full.points.size());
  REQUIRE(n == 50);
  for (int i = 0; i < 20; ++i) t.past.points.push_back(full.points[i]);
  for (int i = 20; i < n; ++i) t.future.points.push_back(full.points[i]);
  t.past_mask.assign(20, 1);
  t.future_mask.assign(30, 1);
  return t;
}

data::PredictionExample two_agent_example(const geom::Trajectory& target,
                                          const geom::Trajectory& neighbor) {
  data::PredictionExample ex;
  ex.example_id = "test#ego";
  ex.scene_id = "test";
  ex.agents.push_back(track_from(target, "ego"));
  ex.agents.push_back(track_from(neighbor, "n1"));
  ex.neighbor_order = {"n1"};
  return ex;
}

std::vector<TokenInterval> only(const std::vector<TokenInterval>& ivs, Token t) {
  std::vector<TokenInterval> out;
  for (const auto& iv : ivs)
    if (iv.token == t) out.push_back(iv);
  return out;
}

geom::MapGraph two_lane_map() {
  geom::MapGraph map;
  map.centerlines.push_back({1, {{-10.0, 0.0}, {60.0, 0.0}}});
  map.centerlines.push_back({2, {{-10.0, 3.5}, {60.0, 3.5}}});
  return map;
}

}  // namespace

TEST_CASE("token names roundtrip and helpers classify correctly") {
  for (int i = 0; i < annotate::kVocabSize; ++i) {
    Token t = static_cast<Token>(i);
    CHECK(annotate::token_from_name(annotate::token_name(t)) == t);
  }
  CHECK_THROWS_AS(annotate::token_from_name("Teleport"), InvalidInput);

  CHECK(annotate::is_content(Token::MoveFast));
  CHECK(annotate::is_content(Token::Agent4));
  CHECK_FALSE(annotate::is_content(Token::Bos));
  CHECK(annotate::is_special(Token::Pad));
  CHECK(annotate::is_agent_ref(Token::Agent1));
  CHECK_FALSE(annotate::is_agent_ref(Token::Yield));
  CHECK(annotate::needs_agent_ref(Token::Follow));
  CHECK(annotate::needs_agent_ref(Token::Yield));
  CHECK_FALSE(annotate::needs_agent_ref(Token::LaneKeep));

  CHECK(annotate::agent_token(1) == Token::Agent1);
  CHECK(annotate::agent_token(4) == Token::Agent4);
  CHECK_THROWS_AS(annotate::agent_token(0), InvalidInput);
  CHECK_THROWS_AS(annotate::agent_token(5), InvalidInput);
}

TEST_CASE("opposite pairs are symmetric and cover exactly three axes") {
  auto expect_pair = [](Token a, Token b) {
    REQUIRE(annotate::opposite_of(a).has_value());
    CHECK(*annotate::opposite_of(a) == b);
    REQUIRE(annotate::opposite_of(b).has_value());
    CHECK(*annotate::opposite_of(b) == a);
  };
  expect_pair(Token::TurnLeft, Token::TurnRight);
  expect_pair(Token::SpeedUp, Token::SlowDown);
  expect_pair(Token::LaneChangeLeft, Token::LaneChangeRight);

  for (Token t : {Token::MoveFast, Token::MoveSlow, Token::Stop, Token::LaneKeep, Token::Follow,
                  Token::Yield, Token::Agent1, Token::Bos, Token::Pad})
    CHECK_FALSE(annotate::opposite_of(t).has_value());
}

TEST_CASE("make_caption produces the fixed layout and validate rejects violations") {
  Caption c = annotate::make_caption({Token::MoveFast, Token::Follow, Token::Agent2}, 8);
  REQUIRE(c.size() == 8);
  CHECK(c.tokens[0] == Token::Bos);
  CHECK(c.tokens[1] == Token::MoveFast);
  CHECK(c.tokens[2] == Token::Follow);
  CHECK(c.tokens[3] == Token::Agent2);
  CHECK(c.tokens[4] == Token::Eos);
  CHECK(c.tokens[5] == Token::Pad);
  CHECK(c.tokens[7] == Token::Pad);
  CHECK(c.content() == std::vector<Token>{Token::MoveFast, Token::Follow, Token::Agent2});
  CHECK(c.to_string() == "<bos> MoveFast Follow Agent#2 <eos> <pad> <pad> <pad>");

  // empty caption is legal: <bos> <eos> <pad>*
  Caption empty = annotate::make_caption({}, 8);
  CHECK(empty.content().empty());

  // more content than max_tokens - 2 cannot fit
  CHECK_THROWS_AS(annotate::make_caption({Token::MoveFast, Token::MoveSlow, Token::Stop,
                                          Token::TurnLeft, Token::TurnRight, Token::SpeedUp,
                                          Token::SlowDown},
                                         8),
                  InvalidInput);
  // interaction verbs must carry their reference, and refs need a verb
  CHECK_THROWS_AS(annotate::make_caption({Token::Follow}, 8), InvalidInput);
  CHECK_THROWS_AS(annotate::make_caption({Token::Agent1}, 8), InvalidInput);
  CHECK_THROWS_AS(annotate::make_caption({Token::Bos}, 8), InvalidInput);

  Caption bad = c;
  bad.tokens[4] = Token::MoveSlow;  // second content run after the pads begin
  CHECK_THROWS_AS(annotate::validate(bad, 8), InvalidInput);
}

TEST_CASE("motion detector flags speed and acceleration runs") {
  AnnotateConfig cfg;

  SUBCASE("fast") {
    auto ivs = annotate::detect_motion_tokens(flat_profile(50, 10.0), cfg);
    auto fast = only(ivs, Token::MoveFast);
    REQUIRE(fast.size() == 1);
    CHECK(fast[0].start == 0);
    CHECK(fast[0].end == 49);
    CHECK(only(ivs, Token::MoveSlow).empty());
    CHECK(only(ivs, Token::Stop).empty());
  }
  SUBCASE("slow but not stopped") {
    auto ivs = annotate::detect_motion_tokens(flat_profile(50, 1.0), cfg);
    REQUIRE(only(ivs, Token::MoveSlow).size() == 1);
    CHECK(only(ivs, Token::Stop).empty());
  }
  SUBCASE("stopped is not slow") {
    auto ivs = annotate::detect_motion_tokens(flat_profile(50, 0.2), cfg);
    REQUIRE(only(ivs, Token::Stop).size() == 1);
    CHECK(only(ivs, Token::MoveSlow).empty());
  }
  SUBCASE("acceleration sign picks the token") {
    auto prof = flat_profile(50, 5.0);
    for (int i = 10; i <= 30; ++i) prof.accel[i] = 2.0;
    for (int i = 35; i <= 45; ++i) prof.accel[i] = -1.5;
    auto ivs = annotate::detect_motion_tokens(prof, cfg);
    auto up = only(ivs, Token::SpeedUp);
    auto down = only(ivs, Token::SlowDown);
    REQUIRE(up.size() == 1);
    CHECK(up[0].start == 10);
    CHECK(up[0].end == 30);
    REQUIRE(down.size() == 1);
    CHECK(down[0].start == 35);
    CHECK(down[0].end == 45);
  }
}

TEST_CASE("motion detector bridges sub-gap dropouts and drops short runs") {
  AnnotateConfig cfg;  // merge_gap 0.2 s -> 2 steps, min_dur 0.5 s -> 5 steps
  auto prof = flat_profile(50, 5.0);

  SUBCASE("a 2-step dropout is bridged into one run") {
    for (int i = 5; i <= 20; ++i) prof.speed[i] = 10.0;
    prof.speed[12] = prof.speed[13] = 5.0;
    auto fast = only(annotate::detect_motion_tokens(prof, cfg), Token::MoveFast);
    REQUIRE(fast.size() == 1);
    CHECK(fast[0].start == 5);
    CHECK(fast[0].end == 20);
  }
  SUBCASE("a 3-step dropout splits the run") {
    for (int i = 5; i <= 20; ++i) prof.speed[i] = 10.0;
    prof.speed[12] = prof.speed[13] = prof.speed[14] = 5.0;
    auto fast = only(annotate::detect_motion_tokens(prof, cfg), Token::MoveFast);
    REQUIRE(fast.size() == 2);
    CHECK(fast[0].end == 11);
    CHECK(fast[1].start == 15);
  }
  SUBCASE("runs below min_dur vanish") {
    for (int i = 10; i <= 13; ++i) prof.speed[i] = 10.0;  // 4 steps < 5
    CHECK(only(annotate::detect_motion_tokens(prof, cfg), Token::MoveFast).empty());
    for (int i = 10; i <= 14; ++i) prof.speed[i] = 10.0;  // exactly 5
    CHECK(only(annotate::detect_motion_tokens(prof, cfg), Token::MoveFast).size() == 1);
  }
}

TEST_CASE("steady yaw produces the matching turn token") {
  AnnotateConfig cfg;
  auto prof = flat_profile(50, 5.0);
  double omega = 0.8;  // rad/s; over the 1 s window that is 0.8 >= pi/6
  for (int i = 0; i < 50; ++i) prof.heading[i] = geom::wrap_angle(omega * 0.1 * i);

  auto ivs = annotate::detect_motion_tokens(prof, cfg);
  auto left = only(ivs, Token::TurnLeft);
  REQUIRE(left.size() == 1);
  // the windowed heading change needs ~7 steps to accumulate past the threshold
  CHECK(left[0].start > 0);
  CHECK(left[0].start <= 10);
  CHECK(left[0].end == 49);
  CHECK(only(ivs, Token::TurnRight).empty());

  for (int i = 0; i < 50; ++i) prof.heading[i] = geom::wrap_angle(-omega * 0.1 * i);
  auto ivs2 = annotate::detect_motion_tokens(prof, cfg);
  CHECK(only(ivs2, Token::TurnRight).size() == 1);
  CHECK(only(ivs2, Token::TurnLeft).empty());
}

TEST_CASE("lane tokens: keep on a constant lane, change with side and interval") {
  AnnotateConfig cfg;
  auto map = two_lane_map();

  SUBCASE("single lane gives one LaneKeep and no change") {
    auto ivs = annotate::detect_lane_tokens(line_x(5.0, 50), map, cfg);
    auto keep = only(ivs, Token::LaneKeep);
    REQUIRE(keep.size() == 1);
    CHECK(keep[0].start == 0);
    CHECK(keep[0].end == 49);
    CHECK(only(ivs, Token::LaneChangeLeft).empty());
    CHECK(only(ivs, Token::LaneChangeRight).empty());
  }

  SUBCASE("shift toward +y while heading +x is a left change") {
    std::vector<geom::Vec2> pts;
    for (int i = 0; i < 50; ++i) {
      double y = i < 20 ? 0.0 : i >= 30 ? 3.5 : 3.5 * (i - 20) / 10.0;
      pts.push_back({0.5 * i, y});
    }
    auto ivs = annotate::detect_lane_tokens(traj_from(std::move(pts)), map, cfg);
    auto change = only(ivs, Token::LaneChangeLeft);
    REQUIRE(change.size() == 1);
    CHECK(change[0].start >= 20 - cfg.lane_change_half_steps);
    CHECK(change[0].end <= 30 + cfg.lane_change_half_steps);
    CHECK(only(ivs, Token::LaneChangeRight).empty());
    // both dwell phases are long enough to register as LaneKeep
    CHECK(only(ivs, Token::LaneKeep).size() == 2);
  }

  SUBCASE("mirrored shift is a right change") {
    std::vector<geom::Vec2> pts;
    for (int i = 0; i < 50; ++i) {
      double y = i < 20 ? 3.5 : i >= 30 ? 0.0 : 3.5 - 3.5 * (i - 20) / 10.0;
      pts.push_back({0.5 * i, y});
    }
    auto ivs = annotate::detect_lane_tokens(traj_from(std::move(pts)), map, cfg);
    CHECK(only(ivs, Token::LaneChangeRight).size() == 1);
    CHECK(only(ivs, Token::LaneChangeLeft).empty());
  }
}

TEST_CASE("follow fires on an aligned leader within range") {
  AnnotateConfig cfg;

  SUBCASE("leader 6 m ahead on the same path") {
    auto ex = two_agent_example(line_x(5.0, 50), line_x(5.0, 50, 6.0));
    auto follow = only(annotate::detect_interaction_tokens(ex, cfg), Token::Follow);
    REQUIRE(follow.size() == 1);
    CHECK(follow[0].agent_ref == 1);
    CHECK(follow[0].length() >= 40);
  }
  SUBCASE("no follow beyond follow_radius") {
    auto ex = two_agent_example(line_x(5.0, 50), line_x(5.0, 50, 20.0));
    CHECK(only(annotate::detect_interaction_tokens(ex, cfg), Token::Follow).empty());
  }
  SUBCASE("no follow with opposing headings") {
    std::vector<geom::Vec2> pts;
    for (int i = 0; i < 50; ++i) pts.push_back({30.0 - 0.5 * i, 0.0});
    auto ex = two_agent_example(line_x(5.0, 50), traj_from(std::move(pts)));
    CHECK(only(annotate::detect_interaction_tokens(ex, cfg), Token::Follow).empty());
  }
  SUBCASE("no follow outside the lateral corridor") {
    auto ex = two_agent_example(line_x(5.0, 50), line_x(5.0, 50, 6.0, 5.0));
    CHECK(only(annotate::detect_interaction_tokens(ex, cfg), Token::Follow).empty());
  }
}

TEST_CASE("yield requires a conflict, later arrival, and a speed drop") {
  AnnotateConfig cfg;
  // neighbor crosses (0,0) heading +y well before the target gets there
  std::vector<geom::Vec2> cross_pts;
  for (int i = 0; i < 50; ++i) cross_pts.push_back({0.0, -2.0 + 0.5 * i});
  auto crosser = traj_from(std::move(cross_pts));

  auto braking_target = [] {
    std::vector<geom::Vec2> pts{{-8.0, 0.0}};
    double v = 4.0;
    for (int i = 0; i < 49; ++i) {
      if (i >= 10 && i < 20) v = std::max(1.0, v - 0.3);
      pts.push_back({pts.back().x + v * 0.1, 0.0});
    }
    return traj_from(std::move(pts));
  };

  SUBCASE("braking before the crossing yields") {
    auto ex = two_agent_example(braking_target(), crosser);
    auto yields = only(annotate::detect_interaction_tokens(ex, cfg), Token::Yield);
    REQUIRE(yields.size() == 1);
    CHECK(yields[0].agent_ref == 1);
    CHECK(yields[0].end <= 30);  // the conflict onset precedes the crossing itself
  }
  SUBCASE("constant speed through the same conflict does not") {
    auto ex = two_agent_example(line_x(4.0, 50, -8.0), crosser);
    CHECK(only(annotate::detect_interaction_tokens(ex, cfg), Token::Yield).empty());
  }
  SUBCASE("braking with no conflicting neighbor does not") {
    auto ex = two_agent_example(braking_target(), line_x(4.0, 50, -8.0, 30.0));
    CHECK(only(annotate::detect_interaction_tokens(ex, cfg), Token::Yield).empty());
  }
}

TEST_CASE("compose orders survivors by onset and expands interaction verbs") {
  AnnotateConfig cfg;
  Rng rng(11);
  std::vector<TokenInterval> ivs = {
      {Token::SpeedUp, 20, 30, 0},
      {Token::Follow, 5, 15, 2},
      {Token::MoveFast, 0, 10, 0},
  };
  auto res = annotate::compose_caption(ivs, 50, cfg, rng);
  REQUIRE_FALSE(res.rejected);
  REQUIRE(res.caption.has_value());
  CHECK(res.caption->content() ==
        std::vector<Token>{Token::MoveFast, Token::Follow, Token::Agent2, Token::SpeedUp});
  REQUIRE(res.kept.size() == 3);
  CHECK(res.kept[0].start == 0);
  CHECK(res.kept[1].start == 5);
  CHECK(res.kept[2].start == 20);
}

TEST_CASE("compose keeps exactly one of near-simultaneous onsets") {
  AnnotateConfig cfg;  // simultaneity_window 3
  std::vector<TokenInterval> ivs = {
      {Token::TurnLeft, 0, 10, 0},
      {Token::MoveFast, 2, 12, 0},
  };

  std::set<Token> seen;
  for (uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    auto res = annotate::compose_caption(ivs, 50, cfg, rng);
    REQUIRE(res.caption.has_value());
    auto content = res.caption->content();
    REQUIRE(content.size() == 1);
    seen.insert(content[0]);
  }
  // the survivor is drawn uniformly, so 30 seeds hit both candidates
  CHECK(seen == std::set<Token>{Token::TurnLeft, Token::MoveFast});

  // same seed, same choice
  Rng a(999), b(999);
  auto ra = annotate::compose_caption(ivs, 50, cfg, a);
  auto rb = annotate::compose_caption(ivs, 50, cfg, b);
  CHECK(ra.caption->content() == rb.caption->content());

  // onsets farther apart than the window both survive
  std::vector<TokenInterval> apart = {
      {Token::TurnLeft, 0, 10, 0},
      {Token::MoveFast, 4, 12, 0},
  };
  Rng c(0);
  auto rc = annotate::compose_caption(apart, 50, cfg, c);
  CHECK(rc.caption->content().size() == 2);
}

TEST_CASE("compose rejects oscillation and too-short usable spans") {
  AnnotateConfig cfg;  // oscillation_limit 3, min_caption_steps 10
  Rng rng(1);

  std::vector<TokenInterval> osc = {
      {Token::TurnLeft, 0, 5, 0},
      {Token::TurnRight, 10, 15, 0},
      {Token::TurnLeft, 20, 25, 0},
      {Token::TurnRight, 30, 35, 0},
  };
  auto res = annotate::compose_caption(osc, 50, cfg, rng);
  CHECK(res.rejected);
  CHECK(res.reason == "opposite tokens alternate too often");
  CHECK_FALSE(res.caption.has_value());

  // two alternations stay under the limit
  std::vector<TokenInterval> mild(osc.begin(), osc.end() - 1);
  auto ok = annotate::compose_caption(mild, 50, cfg, rng);
  CHECK_FALSE(ok.rejected);
  REQUIRE(ok.caption.has_value());
  CHECK(ok.caption->content().size() == 3);

  auto short_span = annotate::compose_caption(osc, 9, cfg, rng);
  CHECK(short_span.rejected);
  CHECK(short_span.reason == "usable steps below min_caption_steps");
}

TEST_CASE("compose truncates at the caption budget, interactions cost two") {
  AnnotateConfig cfg;  // max_tokens 8 -> capacity 6
  Rng rng(3);
  std::vector<TokenInterval> ivs = {
      {Token::MoveFast, 0, 5, 0},        {Token::LaneKeep, 8, 15, 0},
      {Token::SpeedUp, 18, 23, 0},       {Token::TurnLeft, 26, 31, 0},
      {Token::LaneChangeLeft, 34, 39, 0}, {Token::Follow, 42, 47, 2},
  };
  auto res = annotate::compose_caption(ivs, 50, cfg, rng);
  REQUIRE(res.caption.has_value());
  // five singles fit; Follow would need two slots and only one remains
  CHECK(res.caption->content() ==
        std::vector<Token>{Token::MoveFast, Token::LaneKeep, Token::SpeedUp, Token::TurnLeft,
                           Token::LaneChangeLeft});
  CHECK(res.kept.size() == 5);

  // with room to spare the interaction pair fits whole
  std::vector<TokenInterval> fits(ivs.begin() + 2, ivs.end());
  Rng rng2(3);
  auto res2 = annotate::compose_caption(fits, 50, cfg, rng2);
  auto content = res2.caption->content();
  REQUIRE(content.size() == 5);
  CHECK(content[3] == Token::Follow);
  CHECK(content[4] == Token::Agent2);
}

TEST_CASE("annotate config json roundtrip and validation") {
  AnnotateConfig cfg;
  cfg.fast_thresh = 7.5;
  cfg.max_tokens = 10;
  auto text = cfg.to_json_text();
  auto back = AnnotateConfig::from_json_text(text);
  CHECK(back.fast_thresh == 7.5);
  CHECK(back.max_tokens == 10);
  CHECK(back.checksum() == cfg.checksum());

  AnnotateConfig other;
  CHECK(other.checksum() != cfg.checksum());

  CHECK_THROWS_AS(AnnotateConfig::from_json_text("{\"fast_thres\": 1.0}"), ConfigError);

  AnnotateConfig bad;
  bad.slow_thresh = 9.0;  // above fast_thresh
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  AnnotateConfig neg;
  neg.min_dur = 0.0;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("library scripts annotate back to their expected tokens at zero jitter") {
  auto library = data::script_library();
  REQUIRE(library.size() >= 20);
  AnnotateConfig cfg;
  data::AssembleConfig asm_cfg;

  int scripts_checked = 0;
  for (const auto& script : library) {
    auto scenes = data::synth_scenes(script, 1, 42, 0.0);
    REQUIRE(scenes.size() == 1);
    auto examples = data::assemble_examples(scenes[0].scene, scenes[0].map, asm_cfg);
    const data::PredictionExample* target = nullptr;
    for (const auto& ex : examples)
      if (ex.target_agent().agent_id == scenes[0].target_agent_id) target = &ex;
    REQUIRE_MESSAGE(target != nullptr, "script ", script.name, " lost its target");

    Rng rng(seed_combine(42, script.name));
    auto res = annotate::annotate_example(*target, cfg, rng);
    REQUIRE_MESSAGE(res.caption.has_value(), "script ", script.name, " rejected: ", res.reason);

    // multiset recall of the scripted tokens must be perfect without jitter
    std::multiset<Token> got;
    for (Token t : res.caption->content()) got.insert(t);
    for (Token want : scenes[0].expected_tokens) {
      auto it = got.find(want);
      REQUIRE_MESSAGE(it != got.end(), "script ", script.name, " missing ",
                      annotate::token_name(want), "; caption: ", res.caption->to_string());
      got.erase(it);
    }
    ++scripts_checked;
  }
  CHECK(scripts_checked >= 20);
}
