#include "langtraj/annotate.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace langtraj::annotate {

using json = nlohmann::ordered_json;

void AnnotateConfig::validate() const {
  auto positive = [](double v, const char* key) {
    if (!(v > 0)) throw ConfigError(std::string("annotate.") + key + " must be positive");
  };
  positive(fast_thresh, "fast_thresh");
  positive(slow_thresh, "slow_thresh");
  positive(stop_thresh, "stop_thresh");
  positive(accel_thresh, "accel_thresh");
  positive(turn_thresh, "turn_thresh");
  positive(min_dur, "min_dur");
  positive(follow_radius, "follow_radius");
  positive(follow_lateral, "follow_lateral");
  positive(align_angle, "align_angle");
  positive(yield_speed_drop, "yield_speed_drop");
  if (merge_gap < 0) throw ConfigError("annotate.merge_gap must be >= 0");
  if (conflict_radius < 0) throw ConfigError("annotate.conflict_radius must be >= 0");
  if (slow_thresh >= fast_thresh)
    throw ConfigError("annotate.slow_thresh must be below fast_thresh");
  if (stop_thresh >= slow_thresh)
    throw ConfigError("annotate.stop_thresh must be below slow_thresh");
  if (turn_window_steps < 1) throw ConfigError("annotate.turn_window_steps must be >= 1");
  if (yield_window_steps < 1) throw ConfigError("annotate.yield_window_steps must be >= 1");
  if (lane_change_half_steps < 0)
    throw ConfigError("annotate.lane_change_half_steps must be >= 0");
  if (smooth_window < 1 || smooth_window % 2 == 0)
    throw ConfigError("annotate.smooth_window must be odd and >= 1");
  if (max_tokens < 3) throw ConfigError("annotate.max_tokens must be >= 3");
  if (min_caption_steps < 1) throw ConfigError("annotate.min_caption_steps must be >= 1");
  if (oscillation_limit < 1) throw ConfigError("annotate.oscillation_limit must be >= 1");
  if (simultaneity_window < 0) throw ConfigError("annotate.simultaneity_window must be >= 0");
}

namespace {

json to_json(const AnnotateConfig& c) {
  json j;
  j["fast_thresh"] = c.fast_thresh;
  j["slow_thresh"] = c.slow_thresh;
  j["stop_thresh"] = c.stop_thresh;
  j["accel_thresh"] = c.accel_thresh;
  j["turn_thresh"] = c.turn_thresh;
  j["turn_window_steps"] = c.turn_window_steps;
  j["min_dur"] = c.min_dur;
  j["merge_gap"] = c.merge_gap;
  j["smooth_window"] = c.smooth_window;
  j["lane_change_half_steps"] = c.lane_change_half_steps;
  j["follow_radius"] = c.follow_radius;
  j["follow_lateral"] = c.follow_lateral;
  j["align_angle"] = c.align_angle;
  j["conflict_radius"] = c.conflict_radius;
  j["yield_speed_drop"] = c.yield_speed_drop;
  j["yield_window_steps"] = c.yield_window_steps;
  j["max_tokens"] = c.max_tokens;
  j["min_caption_steps"] = c.min_caption_steps;
  j["oscillation_limit"] = c.oscillation_limit;
  j["simultaneity_window"] = c.simultaneity_window;
  return j;
}

}  // namespace

AnnotateConfig AnnotateConfig::from_json_text(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("annotate config: ") + e.what());
  }
  AnnotateConfig c;
  json defaults = to_json(c);
  for (const auto& [key, val] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("annotate config: unknown key '" + key + "'");
  }
  auto g = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  g("fast_thresh", c.fast_thresh);
  g("slow_thresh", c.slow_thresh);
  g("stop_thresh", c.stop_thresh);
  g("accel_thresh", c.accel_thresh);
  g("turn_thresh", c.turn_thresh);
  g("turn_window_steps", c.turn_window_steps);
  g("min_dur", c.min_dur);
  g("merge_gap", c.merge_gap);
  g("smooth_window", c.smooth_window);
  g("lane_change_half_steps", c.lane_change_half_steps);
  g("follow_radius", c.follow_radius);
  g("follow_lateral", c.follow_lateral);
  g("align_angle", c.align_angle);
  g("conflict_radius", c.conflict_radius);
  g("yield_speed_drop", c.yield_speed_drop);
  g("yield_window_steps", c.yield_window_steps);
  g("max_tokens", c.max_tokens);
  g("min_caption_steps", c.min_caption_steps);
  g("oscillation_limit", c.oscillation_limit);
  g("simultaneity_window", c.simultaneity_window);
  c.validate();
  return c;
}

std::string AnnotateConfig::to_json_text() const { return to_json(*this).dump(2); }

uint64_t AnnotateConfig::checksum() const { return fnv1a64(to_json(*this).dump()); }

// ---------------------------------------------------------------------------
// interval machinery

namespace {

// maximal true-runs -> bridge sub-gap dropouts -> enforce minimum duration
std::vector<std::pair<int, int>> runs_of(const std::vector<uint8_t>& flags, int merge_gap_steps,
                                         int min_steps) {
  std::vector<std::pair<int, int>> runs;
  int n = static_cast<int>(flags.size());
  int start = -1;
  for (int i = 0; i <= n; ++i) {
    bool on = i < n && flags[i];
    if (on && start < 0) start = i;
    if (!on && start >= 0) {
      runs.push_back({start, i - 1});
      start = -1;
    }
  }
  // bridge
  std::vector<std::pair<int, int>> merged;
  for (const auto& r : runs) {
    if (!merged.empty() && r.first - merged.back().second - 1 <= merge_gap_steps)
      merged.back().second = r.second;
    else
      merged.push_back(r);
  }
  std::vector<std::pair<int, int>> out;
  for (const auto& r : merged)
    if (r.second - r.first + 1 >= min_steps) out.push_back(r);
  return out;
}

int steps_from_seconds(double seconds, double dt) {
  return std::max(1, static_cast<int>(std::lround(seconds / dt)));
}

void emit_runs(std::vector<TokenInterval>& out, const std::vector<uint8_t>& flags, Token token,
               int merge_steps, int min_steps, int agent_ref = 0) {
  for (const auto& [a, b] : runs_of(flags, merge_steps, min_steps))
    out.push_back({token, a, b, agent_ref});
}

}  // namespace

std::vector<TokenInterval> detect_motion_tokens(const geom::KinematicProfile& prof,
                                                const AnnotateConfig& cfg) {
  cfg.validate();
  int n = prof.size();
  if (n == 0) return {};
  int min_steps = steps_from_seconds(cfg.min_dur, prof.dt);
  int merge_steps = static_cast<int>(std::lround(cfg.merge_gap / prof.dt));

  std::vector<uint8_t> fast(n), slow(n), stop(n), speedup(n), slowdown(n), left(n), right(n);
  for (int i = 0; i < n; ++i) {
    double v = prof.speed[i];
    fast[i] = v >= cfg.fast_thresh;
    stop[i] = v <= cfg.stop_thresh;
    slow[i] = !stop[i] && v <= cfg.slow_thresh;
    speedup[i] = prof.accel[i] >= cfg.accel_thresh;
    slowdown[i] = prof.accel[i] <= -cfg.accel_thresh;
  }
  auto hc = geom::heading_change(prof, std::min(cfg.turn_window_steps, n));
  for (int i = 0; i < n; ++i) {
    left[i] = hc[i] >= cfg.turn_thresh;
    right[i] = hc[i] <= -cfg.turn_thresh;
  }

  std::vector<TokenInterval> out;
  emit_runs(out, fast, Token::MoveFast, merge_steps, min_steps);
  emit_runs(out, slow, Token::MoveSlow, merge_steps, min_steps);
  emit_runs(out, stop, Token::Stop, merge_steps, min_steps);
  emit_runs(out, speedup, Token::SpeedUp, merge_steps, min_steps);
  emit_runs(out, slowdown, Token::SlowDown, merge_steps, min_steps);
  emit_runs(out, left, Token::TurnLeft, merge_steps, min_steps);
  emit_runs(out, right, Token::TurnRight, merge_steps, min_steps);
  return out;
}

std::vector<TokenInterval> detect_lane_tokens(const geom::Trajectory& traj,
                                              const geom::MapGraph& map,
                                              const AnnotateConfig& cfg) {
  cfg.validate();
  if (map.empty()) return {};
  geom::validate(traj);
  int n = traj.size();
  int min_steps = steps_from_seconds(cfg.min_dur, traj.dt);
  int merge_steps = static_cast<int>(std::lround(cfg.merge_gap / traj.dt));

  std::vector<int> lane(n);
  for (int i = 0; i < n; ++i) lane[i] = geom::closest_centerline(traj.points[i], map).lane_id;

  // debounce: a run of at most merge_steps samples on another lane is jitter,
  // not a change; fold it into the preceding run
  for (int i = 1; i < n;) {
    int j = i;
    while (j < n && lane[j] == lane[i]) ++j;
    if (lane[i] != lane[i - 1] && j - i <= merge_steps)
      for (int k = i; k < j; ++k) lane[k] = lane[i - 1];
    i = j;
  }

  auto prof = geom::compute_kinematics(traj, cfg.smooth_window);
  std::vector<TokenInterval> out;

  // LaneKeep: stretches with a constant closest lane
  {
    int start = 0;
    std::vector<std::pair<int, int>> keeps;
    for (int i = 1; i <= n; ++i) {
      if (i == n || lane[i] != lane[i - 1]) {
        keeps.push_back({start, i - 1});
        start = i;
      }
    }
    for (const auto& [a, b] : keeps)
      if (b - a + 1 >= min_steps) out.push_back({Token::LaneKeep, a, b, 0});
  }

  // a LaneChange interval around each closest-lane switch; the crossing side
  // comes from the vector between the projections onto the old and new lane
  auto project_onto = [&](geom::Vec2 p, int lane_id) {
    geom::MapGraph one;
    for (const auto& l : map.centerlines)
      if (l.id == lane_id) one.centerlines.push_back(l);
    geom::Vec2 best_pt{0, 0};
    double best = std::numeric_limits<double>::infinity();
    for (const auto& l : one.centerlines) {
      for (size_t k = 0; k + 1 < l.polyline.size(); ++k) {
        geom::Vec2 a = l.polyline[k], b = l.polyline[k + 1];
        geom::Vec2 ab = b - a;
        double len2 = ab.dot(ab);
        double tt = len2 == 0 ? 0.0 : std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
        geom::Vec2 q = a + ab * tt;
        double d = (p - q).norm();
        if (d < best) {
          best = d;
          best_pt = q;
        }
      }
    }
    return best_pt;
  };
  for (int i = 1; i < n; ++i) {
    if (lane[i] == lane[i - 1]) continue;
    geom::Vec2 p = traj.points[i];
    geom::Vec2 dir = project_onto(p, lane[i]) - project_onto(p, lane[i - 1]);
    geom::Vec2 hvec{std::cos(prof.heading[i]), std::sin(prof.heading[i])};
    Token tok = hvec.cross(dir) > 0 ? Token::LaneChangeLeft : Token::LaneChangeRight;
    int a = std::max(0, i - cfg.lane_change_half_steps);
    int b = std::min(n - 1, i + cfg.lane_change_half_steps);
    out.push_back({tok, a, b, 0});
  }
  return out;
}

namespace {

// polyline arc-length sampler for the Follow check
struct PathIndex {
  std::vector<geom::Vec2> pts;
  std::vector<double> cum;  // arc length at each vertex
  double total = 0;

  explicit PathIndex(const std::vector<geom::Vec2>& p) : pts(p) {
    cum.resize(pts.size(), 0.0);
    for (size_t i = 1; i < pts.size(); ++i) {
      cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
    }
    total = cum.empty() ? 0.0 : cum.back();
  }

  // closest point: returns (arc, lateral distance, path direction there)
  void project(geom::Vec2 p, double& arc, double& lat, double& dir) const {
    double best = std::numeric_limits<double>::infinity();
    arc = 0;
    dir = 0;
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
      geom::Vec2 a = pts[i], b = pts[i + 1];
      geom::Vec2 ab = b - a;
      double len2 = ab.dot(ab);
      double t = len2 == 0 ? 0.0 : std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
      geom::Vec2 q = a + ab * t;
      double d = (p - q).norm();
      if (d < best) {
        best = d;
        arc = cum[i] + std::sqrt(len2) * t;
        dir = std::atan2(ab.y, ab.x);
      }
    }
    lat = best;
  }
};

// longest contiguous run of valid steps
std::pair<int, int> longest_valid_run(const std::vector<uint8_t>& mask) {
  int best_a = 0, best_b = -1, start = -1;
  int n = static_cast<int>(mask.size());
  for (int i = 0; i <= n; ++i) {
    bool on = i < n && mask[i];
    if (on && start < 0) start = i;
    if (!on && start >= 0) {
      if (i - 1 - start > best_b - best_a) {
        best_a = start;
        best_b = i - 1;
      }
      start = -1;
    }
  }
  return {best_a, best_b};
}

}  // namespace

std::vector<TokenInterval> detect_interaction_tokens(const data::PredictionExample& ex,
                                                     const AnnotateConfig& cfg) {
  cfg.validate();
  if (ex.agents.empty()) return {};
  const data::AgentTrack& target = ex.agents[ex.target];
  geom::Trajectory ttraj = target.full();
  auto tmask = target.full_mask();
  int n = ttraj.size();
  if (n < 2) return {};
  auto tprof = geom::compute_kinematics(ttraj, cfg.smooth_window);
  int min_steps = steps_from_seconds(cfg.min_dur, ttraj.dt);
  int merge_steps = static_cast<int>(std::lround(cfg.merge_gap / ttraj.dt));

  std::vector<TokenInterval> out;
  for (size_t k = 0; k < ex.agents.size(); ++k) {
    if (static_cast<int>(k) == ex.target) continue;
    int rank = static_cast<int>(k);  // agents[1] is Agent#1, etc.
    if (rank > kMaxAgentRef) break;
    const data::AgentTrack& nb = ex.agents[k];
    geom::Trajectory ntraj = nb.full();
    auto nmask = nb.full_mask();
    auto [ra, rb] = longest_valid_run(nmask);
    if (rb - ra + 1 < 2) continue;

    std::vector<geom::Vec2> run_pts(ntraj.points.begin() + ra, ntraj.points.begin() + rb + 1);
    PathIndex path(run_pts);

    // Follow: hug the neighbor's path from behind with matching heading
    if (path.total >= 1.0) {
      // neighbor's own arc position at each step of its run
      std::vector<double> narc(run_pts.size(), 0.0);
      for (size_t i = 0; i < run_pts.size(); ++i) narc[i] = path.cum[i];
      std::vector<uint8_t> flags(n, 0);
      for (int t = std::max(0, ra); t <= std::min(n - 1, rb); ++t) {
        if (!tmask[t]) continue;
        double arc, lat, dir;
        path.project(ttraj.points[t], arc, lat, dir);
        if (lat > cfg.follow_lateral) continue;
        double gap = narc[t - ra] - arc;
        if (gap <= 1e-6 || gap > cfg.follow_radius) continue;
        if (std::abs(geom::wrap_angle(tprof.heading[t] - dir)) > cfg.align_angle) continue;
        flags[t] = 1;
      }
      emit_runs(out, flags, Token::Follow, merge_steps, min_steps, rank);
    }

    // Yield: conflicting paths, braking beforehand, arriving second
    geom::Trajectory sub;
    sub.dt = ntraj.dt;
    sub.t0 = ntraj.t0 + ra * ntraj.dt;
    sub.points = run_pts;
    auto ev = geom::path_intersection(ttraj, sub, cfg.conflict_radius);
    if (ev && ev->arrival_a > ev->arrival_b) {
      int ia = std::clamp(static_cast<int>(std::lround((ev->arrival_a - ttraj.t0) / ttraj.dt)), 0,
                          n - 1);
      int before = std::max(0, ia - cfg.yield_window_steps);
      if (tprof.speed[before] - tprof.speed[ia] >= cfg.yield_speed_drop) {
        int a = std::max(0, ia - cfg.yield_window_steps);
        if (ia - a + 1 >= min_steps) out.push_back({Token::Yield, a, ia, rank});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// composition

ComposeResult compose_caption(std::vector<TokenInterval> intervals, int usable_steps,
                              const AnnotateConfig& cfg, Rng& rng) {
  cfg.validate();
  ComposeResult res;
  if (usable_steps < cfg.min_caption_steps) {
    res.rejected = true;
    res.reason = "usable steps below min_caption_steps";
    return res;
  }

  std::sort(intervals.begin(), intervals.end(), [](const TokenInterval& a, const TokenInterval& b) {
    if (a.start != b.start) return a.start < b.start;
    if (a.end != b.end) return a.end < b.end;
    if (a.token != b.token) return a.token < b.token;
    return a.agent_ref < b.agent_ref;
  });

  // same-onset groups keep exactly one member each
  std::vector<TokenInterval> kept;
  size_t i = 0;
  while (i < intervals.size()) {
    size_t j = i + 1;
    while (j < intervals.size() &&
           intervals[j].start - intervals[i].start <= cfg.simultaneity_window)
      ++j;
    kept.push_back(intervals[i + rng.uniform_int(static_cast<int>(j - i))]);
    i = j;
  }

  // oscillation rejection on the surviving sequence
  int alternations = 0;
  for (size_t k = 1; k < kept.size(); ++k) {
    auto opp = opposite_of(kept[k - 1].token);
    if (opp && *opp == kept[k].token) ++alternations;
  }
  if (alternations >= cfg.oscillation_limit) {
    res.rejected = true;
    res.reason = "opposite tokens alternate too often";
    return res;
  }

  // expand interaction verbs and truncate to the caption budget
  int capacity = cfg.max_tokens - 2;
  std::vector<Token> content;
  std::vector<TokenInterval> used;
  for (const TokenInterval& iv : kept) {
    int cost = needs_agent_ref(iv.token) ? 2 : 1;
    if (static_cast<int>(content.size()) + cost > capacity) break;
    content.push_back(iv.token);
    if (needs_agent_ref(iv.token)) content.push_back(agent_token(iv.agent_ref));
    used.push_back(iv);
  }

  res.caption = make_caption(content, cfg.max_tokens);
  res.kept = std::move(used);
  return res;
}

ComposeResult annotate_example(const data::PredictionExample& ex, const AnnotateConfig& cfg,
                               Rng& rng) {
  const data::AgentTrack& target = ex.agents.at(ex.target);
  geom::Trajectory traj = target.full();
  auto mask = target.full_mask();
  int usable = 0;
  for (uint8_t m : mask) usable += m ? 1 : 0;

  auto prof = geom::compute_kinematics(traj, cfg.smooth_window);
  std::vector<TokenInterval> intervals = detect_motion_tokens(prof, cfg);
  auto lanes = detect_lane_tokens(traj, ex.map, cfg);
  intervals.insert(intervals.end(), lanes.begin(), lanes.end());
  auto inter = detect_interaction_tokens(ex, cfg);
  intervals.insert(intervals.end(), inter.begin(), inter.end());

  return compose_caption(std::move(intervals), usable, cfg, rng);
}

}  // namespace langtraj::annotate
