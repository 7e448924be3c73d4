#pragma once

// Scripted synthetic scenes: deterministic maneuver programs integrated on the
// 10 Hz grid, with optional position jitter. The bundled script library is the
// annotation oracle: each script states the tokens its target must produce.

#include <string>
#include <vector>

#include "langtraj/scene.hpp"

namespace langtraj::data {

// One timed maneuver. Segments of an agent program must not overlap in time;
// outside any segment the agent holds its current speed and heading.
struct Segment {
  enum class Kind { Cruise, Accel, Turn, LaneShift };
  Kind kind = Kind::Cruise;
  double start = 0.0;     // seconds from scene start
  double duration = 0.0;  // seconds
  double accel = 0.0;         // Accel: signed m/s^2
  double target_speed = -1;   // Accel: clamp speed here when >= 0
  double omega = 0.0;         // Turn: signed yaw rate, rad/s
  double lateral = 0.0;       // LaneShift: signed offset, +left of heading
};

struct AgentProgram {
  std::string agent_id;
  geom::Vec2 start;
  double heading0 = 0.0;
  double speed0 = 0.0;
  std::vector<Segment> segments;
};

struct ScenarioScript {
  std::string name;
  std::string target_agent_id;
  std::vector<AgentProgram> agents;
  geom::MapGraph map;
  std::vector<annotate::Token> expected_tokens;  // target's caption content, in order
  int steps = 50;
  double dt = 0.1;
};

// Throws InvalidInput on overlapping segments, unknown target id, bad timing.
void validate_script(const ScenarioScript& script);

struct SynthScene {
  Scene scene;
  geom::MapGraph map;
  std::vector<annotate::Token> expected_tokens;
  std::string target_agent_id;
};

// n jittered realizations of one script. Deterministic in (script, n, seed,
// jitter_sigma): scene i uses an rng seeded from (seed, i).
std::vector<SynthScene> synth_scenes(const ScenarioScript& script, int n, uint64_t seed,
                                     double jitter_sigma);

// Bundled library: >= 20 scripts, every content token covered by at least one.
const std::vector<ScenarioScript>& script_library();
const ScenarioScript& find_script(const std::string& name);  // throws InvalidInput

// Random multi-phase single-agent script (cruise/accel/turn phases, sometimes
// a lane map); used for corpus statistics and training variety.
ScenarioScript random_script(Rng& rng, const std::string& name);

}  // namespace langtraj::data
