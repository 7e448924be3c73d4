#include "langtraj/synth.hpp"

#include <algorithm>
#include <cmath>

namespace langtraj::data {

using annotate::Token;

void validate_script(const ScenarioScript& script) {
  if (script.steps < 2) throw InvalidInput("script '" + script.name + "': needs >= 2 steps");
  if (!(script.dt > 0)) throw InvalidInput("script '" + script.name + "': dt must be positive");
  if (script.agents.empty()) throw InvalidInput("script '" + script.name + "': no agents");
  bool target_found = false;
  for (const auto& a : script.agents) {
    if (a.agent_id == script.target_agent_id) target_found = true;
    for (const auto& s : a.segments) {
      if (s.duration <= 0)
        throw InvalidInput("script '" + script.name + "': segment duration must be positive");
      if (s.start < 0) throw InvalidInput("script '" + script.name + "': segment starts before 0");
    }
    // conflicting simultaneous segments are not expressible in the simulator
    for (size_t i = 0; i < a.segments.size(); ++i) {
      for (size_t j = i + 1; j < a.segments.size(); ++j) {
        const Segment& x = a.segments[i];
        const Segment& y = a.segments[j];
        bool disjoint = x.start + x.duration <= y.start + 1e-9 || y.start + y.duration <= x.start + 1e-9;
        if (!disjoint)
          throw InvalidInput("script '" + script.name + "': agent " + a.agent_id +
                             " has overlapping segments");
      }
    }
  }
  if (!target_found)
    throw InvalidInput("script '" + script.name + "': target agent '" + script.target_agent_id +
                       "' not in agent list");
}

namespace {

std::vector<geom::Vec2> simulate(const AgentProgram& prog, int steps, double dt) {
  std::vector<geom::Vec2> out(steps);
  geom::Vec2 base = prog.start;
  double heading = prog.heading0;
  double speed = prog.speed0;
  double offset = 0.0;        // accumulated lateral shift
  double shift_heading = 0.0; // heading when the active shift began

  auto active = [&](double t) -> const Segment* {
    for (const auto& s : prog.segments)
      if (t >= s.start - 1e-9 && t < s.start + s.duration - 1e-9) return &s;
    return nullptr;
  };
  auto shift_profile = [](const Segment& s, double t) {
    double u = std::clamp((t - s.start) / s.duration, 0.0, 1.0);
    return s.lateral * 0.5 * (1.0 - std::cos(M_PI * u));
  };

  double committed_offset = 0.0;  // shifts from segments that already ended
  for (int i = 0; i < steps; ++i) {
    double t = i * dt;
    const Segment* seg = active(t);
    double cur_offset = committed_offset;
    if (seg && seg->kind == Segment::Kind::LaneShift) {
      shift_heading = heading;
      cur_offset += shift_profile(*seg, t);
    }
    offset = cur_offset;
    geom::Vec2 normal{-std::sin(shift_heading), std::cos(shift_heading)};
    out[i] = base + normal * offset;

    // advance state to the next step
    if (seg) {
      switch (seg->kind) {
        case Segment::Kind::Cruise:
          break;
        case Segment::Kind::Accel:
          speed += seg->accel * dt;
          if (seg->target_speed >= 0) {
            if (seg->accel > 0)
              speed = std::min(speed, seg->target_speed);
            else
              speed = std::max(speed, seg->target_speed);
          }
          speed = std::max(0.0, speed);
          break;
        case Segment::Kind::Turn:
          heading = geom::wrap_angle(heading + seg->omega * dt);
          break;
        case Segment::Kind::LaneShift:
          break;
      }
      // commit a shift the moment its window closes
      if (seg->kind == Segment::Kind::LaneShift &&
          (i + 1) * dt >= seg->start + seg->duration - 1e-9) {
        committed_offset += seg->lateral;
      }
    }
    base = base + geom::Vec2{std::cos(heading), std::sin(heading)} * (speed * dt);
  }
  return out;
}

}  // namespace

std::vector<SynthScene> synth_scenes(const ScenarioScript& script, int n, uint64_t seed,
                                     double jitter_sigma) {
  validate_script(script);
  if (n < 1) throw InvalidInput("synth_scenes: n must be >= 1");
  if (jitter_sigma < 0) throw InvalidInput("synth_scenes: jitter_sigma must be >= 0");

  std::vector<SynthScene> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(seed_combine(seed_combine(seed, script.name), static_cast<uint64_t>(i)));
    SynthScene sc;
    char suffix[16];
    std::snprintf(suffix, sizeof(suffix), "%04d", i);
    sc.scene.scene_id = script.name + "_" + suffix;
    sc.scene.city = "SYNTH";
    sc.map = script.map;
    sc.expected_tokens = script.expected_tokens;
    sc.target_agent_id = script.target_agent_id;
    for (const auto& prog : script.agents) {
      auto pts = simulate(prog, script.steps, script.dt);
      Track tr;
      tr.object_type = "AGENT";
      for (int k = 0; k < script.steps; ++k) {
        geom::Vec2 p = pts[k];
        if (jitter_sigma > 0) {
          p.x += jitter_sigma * rng.gaussian();
          p.y += jitter_sigma * rng.gaussian();
        }
        tr.samples.push_back({k * script.dt, p});
      }
      sc.scene.tracks[prog.agent_id] = std::move(tr);
    }
    out.push_back(std::move(sc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// script library

namespace {

geom::MapGraph two_lane_map() {
  geom::MapGraph map;
  for (int lane = 0; lane < 2; ++lane) {
    geom::LaneCenterline cl;
    cl.id = lane + 1;
    double y = lane * 3.5;
    for (double x = -30.0; x <= 80.0 + 1e-9; x += 10.0) cl.polyline.push_back({x, y});
    map.centerlines.push_back(std::move(cl));
  }
  return map;
}

ScenarioScript single(const std::string& name, double speed,
                      std::vector<Segment> segments, std::vector<Token> expected,
                      geom::MapGraph map = {}, geom::Vec2 start = {0, 0}) {
  ScenarioScript s;
  s.name = name;
  s.target_agent_id = "ego";
  AgentProgram ego;
  ego.agent_id = "ego";
  ego.start = start;
  ego.speed0 = speed;
  ego.segments = std::move(segments);
  s.agents.push_back(std::move(ego));
  s.map = std::move(map);
  s.expected_tokens = std::move(expected);
  return s;
}

AgentProgram parked(const std::string& id, geom::Vec2 at) {
  AgentProgram p;
  p.agent_id = id;
  p.start = at;
  p.speed0 = 0.0;
  return p;
}

AgentProgram mover(const std::string& id, geom::Vec2 at, double heading, double speed) {
  AgentProgram p;
  p.agent_id = id;
  p.start = at;
  p.heading0 = heading;
  p.speed0 = speed;
  return p;
}

Segment accel_seg(double start, double dur, double a, double target) {
  Segment s;
  s.kind = Segment::Kind::Accel;
  s.start = start;
  s.duration = dur;
  s.accel = a;
  s.target_speed = target;
  return s;
}

Segment turn_seg(double start, double dur, double omega) {
  Segment s;
  s.kind = Segment::Kind::Turn;
  s.start = start;
  s.duration = dur;
  s.omega = omega;
  return s;
}

Segment shift_seg(double start, double dur, double lateral) {
  Segment s;
  s.kind = Segment::Kind::LaneShift;
  s.start = start;
  s.duration = dur;
  s.lateral = lateral;
  return s;
}

std::vector<ScenarioScript> build_library() {
  using T = Token;
  std::vector<ScenarioScript> lib;

  lib.push_back(single("cruise_fast", 10.0, {}, {T::MoveFast}));
  lib.push_back(single("cruise_slow", 1.5, {}, {T::MoveSlow}));
  lib.push_back(single("stationary", 0.0, {}, {T::Stop}));
  lib.push_back(single("gentle_speed_up", 3.0, {accel_seg(0.5, 2.0, 2.0, 7.0)}, {T::SpeedUp}));
  lib.push_back(single("gentle_slow_down", 7.0, {accel_seg(0.5, 2.0, -2.0, 3.0)}, {T::SlowDown}));
  lib.push_back(single("turn_left", 5.0, {turn_seg(1.5, 1.2, 0.9)}, {T::TurnLeft}));
  lib.push_back(single("turn_right", 5.0, {turn_seg(1.5, 1.2, -0.9)}, {T::TurnRight}));
  lib.push_back(single("lane_keep", 5.0, {}, {T::LaneKeep}, two_lane_map()));
  lib.push_back(single("lane_change_left", 5.0, {shift_seg(1.2, 3.0, 3.5)},
                       {T::LaneKeep, T::LaneChangeLeft, T::LaneKeep}, two_lane_map()));
  lib.push_back(single("lane_change_right", 5.0, {shift_seg(1.2, 3.0, -3.5)},
                       {T::LaneKeep, T::LaneChangeRight, T::LaneKeep}, two_lane_map(), {0, 3.5}));

  {  // the leading car is the nearest neighbor at t=0
    ScenarioScript s = single("follow_leader", 5.0, {}, {T::Follow, T::Agent1});
    s.agents.push_back(mover("lead", {8, 0}, 0.0, 5.0));
    lib.push_back(std::move(s));
  }
  {  // one parked car sits closer than the lead at t=0, pushing it to rank 2
    ScenarioScript s = single("follow_second", 5.0, {}, {T::Follow, T::Agent2});
    s.agents.push_back(mover("lead", {8, 0}, 0.0, 5.0));
    s.agents.push_back(parked("parked1", {13, 4}));
    lib.push_back(std::move(s));
  }
  {
    ScenarioScript s = single("follow_third", 5.0, {}, {T::Follow, T::Agent3});
    s.agents.push_back(mover("lead", {8, 0}, 0.0, 5.0));
    s.agents.push_back(parked("parked1", {13, 4}));
    s.agents.push_back(parked("parked2", {12, -5}));
    lib.push_back(std::move(s));
  }
  {
    ScenarioScript s = single("follow_fourth", 5.0, {}, {T::Follow, T::Agent4});
    s.agents.push_back(mover("lead", {8, 0}, 0.0, 5.0));
    s.agents.push_back(parked("parked1", {13, 4}));
    s.agents.push_back(parked("parked2", {12, -5}));
    s.agents.push_back(parked("parked3", {6, 6}));
    lib.push_back(std::move(s));
  }
  {  // ego brakes gently and reaches the crossing after the other car
    ScenarioScript s = single("yield_cross", 5.0, {accel_seg(1.0, 2.0, -0.8, 0.0)},
                              {T::Yield, T::Agent1}, {}, {-14, 0});
    s.agents.push_back(mover("cross", {0, -20}, M_PI / 2, 8.0));
    lib.push_back(std::move(s));
  }
  {
    ScenarioScript s = single("yield_second", 5.0, {accel_seg(1.0, 2.0, -0.8, 0.0)},
                              {T::Yield, T::Agent2}, {}, {-14, 0});
    s.agents.push_back(mover("cross", {0, -20}, M_PI / 2, 8.0));
    s.agents.push_back(parked("parked1", {-2, 3}));
    lib.push_back(std::move(s));
  }
  {  // ego clears the crossing first: fast cruise, no yield
    ScenarioScript s = single("cross_first", 8.5, {}, {T::MoveFast}, {}, {-14, 0});
    s.agents.push_back(mover("cross", {0, -20}, M_PI / 2, 5.0));
    lib.push_back(std::move(s));
  }
  lib.push_back(single("turn_then_speed_up", 5.0,
                       {turn_seg(0.6, 1.2, 0.9), accel_seg(2.2, 2.0, 2.0, 9.0)},
                       {T::TurnLeft, T::SpeedUp, T::MoveFast}));
  lib.push_back(single("decel_to_stop", 5.0, {accel_seg(0.8, 1.67, -3.0, 0.0)},
                       {T::SlowDown, T::MoveSlow, T::Stop}));
  lib.push_back(single("fast_then_turn_left", 9.0, {turn_seg(2.0, 1.5, 0.7)},
                       {T::MoveFast, T::TurnLeft}));
  lib.push_back(single("slow_then_turn_right", 1.8, {turn_seg(2.0, 1.2, -1.1)},
                       {T::MoveSlow, T::TurnRight}));
  lib.push_back(single("speed_up_to_fast", 5.0, {accel_seg(0.8, 2.0, 2.0, 9.0)},
                       {T::SpeedUp, T::MoveFast}));
  lib.push_back(single("s_curve", 5.0, {turn_seg(0.8, 1.2, 0.9), turn_seg(2.6, 1.2, -0.9)},
                       {T::TurnLeft, T::TurnRight}));

  for (const auto& s : lib) validate_script(s);
  return lib;
}

}  // namespace

const std::vector<ScenarioScript>& script_library() {
  static const std::vector<ScenarioScript> lib = build_library();
  return lib;
}

const ScenarioScript& find_script(const std::string& name) {
  for (const auto& s : script_library())
    if (s.name == name) return s;
  throw InvalidInput("unknown script: " + name);
}

ScenarioScript random_script(Rng& rng, const std::string& name) {
  ScenarioScript s;
  s.name = name;
  s.target_agent_id = "ego";
  AgentProgram ego;
  ego.agent_id = "ego";
  ego.speed0 = 3.0 + 4.0 * rng.uniform();
  double t = 0.3 + 0.5 * rng.uniform();
  int phases = 2 + rng.uniform_int(3);
  for (int i = 0; i < phases && t < 3.6; ++i) {
    double dur = 0.8 + 0.8 * rng.uniform();
    switch (rng.uniform_int(3)) {
      case 0:
        ego.segments.push_back(accel_seg(t, dur, rng.uniform() < 0.5 ? 2.0 : -2.0, -1));
        break;
      case 1:
        ego.segments.push_back(turn_seg(t, dur, rng.uniform() < 0.5 ? 0.9 : -0.9));
        break;
      case 2: {
        Segment c;
        c.kind = Segment::Kind::Cruise;
        c.start = t;
        c.duration = dur;
        ego.segments.push_back(c);
        break;
      }
    }
    t += dur + 0.4 + 0.4 * rng.uniform();
  }
  s.agents.push_back(std::move(ego));
  if (rng.uniform() < 0.4) s.map = two_lane_map();
  validate_script(s);
  return s;
}

}  // namespace langtraj::data
