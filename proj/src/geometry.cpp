#include "langtraj/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace langtraj::geom {

void validate(const Trajectory& traj) {
  if (traj.size() < 2) throw InvalidInput("trajectory needs at least 2 points");
  if (!(traj.dt > 0.0)) throw InvalidInput("trajectory dt must be positive");
  for (const Vec2& p : traj.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw InvalidInput("trajectory contains non-finite coordinates");
  }
}

void validate(const MapGraph& map) {
  std::vector<int> ids;
  for (const LaneCenterline& lane : map.centerlines) {
    if (lane.polyline.size() < 2)
      throw InvalidInput("centerline " + std::to_string(lane.id) + " has fewer than 2 vertices");
    for (size_t i = 1; i < lane.polyline.size(); ++i) {
      Vec2 d = lane.polyline[i] - lane.polyline[i - 1];
      if (d.norm() == 0.0)
        throw InvalidInput("centerline " + std::to_string(lane.id) +
                           " has repeated consecutive vertices");
    }
    ids.push_back(lane.id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw InvalidInput("duplicate centerline id in map");
}

double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a > M_PI) a -= 2.0 * M_PI;
  if (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

namespace {

// Truncated centered moving average; width 1 is the identity.
std::vector<double> smooth(const std::vector<double>& v, int window) {
  if (window <= 1) return v;
  int half = window / 2;
  int n = static_cast<int>(v.size());
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    int lo = std::max(0, i - half);
    int hi = std::min(n - 1, i + half);
    double s = 0.0;
    for (int j = lo; j <= hi; ++j) s += v[j];
    out[i] = s / (hi - lo + 1);
  }
  return out;
}

// Central differences in the interior, one-sided at both ends.
std::vector<double> differentiate(const std::vector<double>& v, double dt) {
  int n = static_cast<int>(v.size());
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  out[0] = (v[1] - v[0]) / dt;
  out[n - 1] = (v[n - 1] - v[n - 2]) / dt;
  for (int i = 1; i < n - 1; ++i) out[i] = (v[i + 1] - v[i - 1]) / (2.0 * dt);
  return out;
}

}  // namespace

KinematicProfile compute_kinematics(const Trajectory& traj, int smooth_window) {
  validate(traj);
  if (smooth_window < 1 || smooth_window % 2 == 0)
    throw InvalidInput("smooth_window must be odd and >= 1");

  int n = traj.size();
  double dt = traj.dt;
  std::vector<double> px(n), py(n);
  for (int i = 0; i < n; ++i) {
    px[i] = traj.points[i].x;
    py[i] = traj.points[i].y;
  }
  std::vector<double> vx = smooth(differentiate(px, dt), smooth_window);
  std::vector<double> vy = smooth(differentiate(py, dt), smooth_window);

  KinematicProfile prof;
  prof.dt = dt;
  prof.speed.resize(n);
  prof.heading.resize(n);
  constexpr double kStill = 1e-9;  // below this the heading is undefined
  double last_heading = 0.0;
  bool seen_motion = false;
  for (int i = 0; i < n; ++i) {
    prof.speed[i] = std::hypot(vx[i], vy[i]);
    if (prof.speed[i] > kStill) {
      last_heading = std::atan2(vy[i], vx[i]);
      seen_motion = true;
    }
    prof.heading[i] = last_heading;
  }
  if (seen_motion) {
    // backfill leading zero-speed steps with the first real heading
    double first = 0.0;
    for (int i = 0; i < n; ++i) {
      if (prof.speed[i] > kStill) {
        first = prof.heading[i];
        break;
      }
    }
    for (int i = 0; i < n && prof.speed[i] <= kStill; ++i) prof.heading[i] = first;
  }

  prof.accel = smooth(differentiate(prof.speed, dt), smooth_window);

  // yaw rate from wrapped heading deltas; zero while (nearly) stationary
  prof.yaw_rate.resize(n, 0.0);
  if (n >= 2) {
    auto delta = [&](int i, int j) { return wrap_angle(prof.heading[i] - prof.heading[j]); };
    prof.yaw_rate[0] = delta(1, 0) / dt;
    prof.yaw_rate[n - 1] = delta(n - 1, n - 2) / dt;
    for (int i = 1; i < n - 1; ++i) prof.yaw_rate[i] = delta(i + 1, i - 1) / (2.0 * dt);
    for (int i = 0; i < n; ++i)
      if (prof.speed[i] <= kStill) prof.yaw_rate[i] = 0.0;
  }
  return prof;
}

namespace {

// Closest point on segment [a,b] to p; returns the segment parameter in [0,1].
double project_on_segment(Vec2 p, Vec2 a, Vec2 b) {
  Vec2 ab = b - a;
  double len2 = ab.dot(ab);
  if (len2 == 0.0) return 0.0;
  return std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
}

}  // namespace

LaneProjection closest_centerline(Vec2 p, const MapGraph& map) {
  if (map.empty()) throw InvalidInput("closest_centerline: map has no centerlines");
  validate(map);

  // iterate in ascending id order so exact distance ties resolve to lowest id
  std::vector<const LaneCenterline*> lanes;
  for (const auto& l : map.centerlines) lanes.push_back(&l);
  std::sort(lanes.begin(), lanes.end(),
            [](const LaneCenterline* a, const LaneCenterline* b) { return a->id < b->id; });

  LaneProjection best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const LaneCenterline* lane : lanes) {
    double arc = 0.0;
    for (size_t i = 0; i + 1 < lane->polyline.size(); ++i) {
      Vec2 a = lane->polyline[i];
      Vec2 b = lane->polyline[i + 1];
      double t = project_on_segment(p, a, b);
      Vec2 q = a + (b - a) * t;
      double d = (p - q).norm();
      if (d < best_dist) {
        best_dist = d;
        best.lane_id = lane->id;
        best.arc_position = arc + (b - a).norm() * t;
        best.lateral_offset = d;
      }
      arc += (b - a).norm();
    }
  }
  return best;
}

namespace {

struct Candidate {
  IntersectionEvent ev;
  bool valid = false;
};

// Proper or touching intersection of segments p0p1 and q0q1. On success the
// parameters s,t in [0,1] locate the crossing on each segment.
bool segment_crossing(Vec2 p0, Vec2 p1, Vec2 q0, Vec2 q1, double& s, double& t) {
  Vec2 r = p1 - p0;
  Vec2 d = q1 - q0;
  double denom = r.cross(d);
  Vec2 qp = q0 - p0;
  if (std::abs(denom) < 1e-12) return false;  // parallel/collinear handled by approach check
  s = qp.cross(d) / denom;
  t = qp.cross(r) / denom;
  return s >= 0.0 && s <= 1.0 && t >= 0.0 && t <= 1.0;
}

// Closest pair of points between two segments; returns parameters and points.
double segment_distance(Vec2 p0, Vec2 p1, Vec2 q0, Vec2 q1, double& s, double& t, Vec2& cp,
                        Vec2& cq) {
  // sample candidate parameter pairs from endpoint projections; exact enough
  // for conflict detection at trajectory scale and fully deterministic
  double best = std::numeric_limits<double>::infinity();
  auto consider = [&](double ss, double tt) {
    Vec2 a = p0 + (p1 - p0) * ss;
    Vec2 b = q0 + (q1 - q0) * tt;
    double d = (a - b).norm();
    if (d < best) {
      best = d;
      s = ss;
      t = tt;
      cp = a;
      cq = b;
    }
  };
  consider(0.0, project_on_segment(p0, q0, q1));
  consider(1.0, project_on_segment(p1, q0, q1));
  consider(project_on_segment(q0, p0, p1), 0.0);
  consider(project_on_segment(q1, p0, p1), 1.0);
  return best;
}

}  // namespace

std::optional<IntersectionEvent> path_intersection(const Trajectory& a, const Trajectory& b,
                                                   double radius) {
  validate(a);
  validate(b);
  if (radius < 0.0) throw InvalidInput("path_intersection: radius must be >= 0");

  Candidate best;
  auto key = [](const IntersectionEvent& e) {
    return std::pair<double, double>(std::min(e.arrival_a, e.arrival_b),
                                     e.arrival_a + e.arrival_b);
  };
  auto offer = [&](const IntersectionEvent& e) {
    if (!best.valid || key(e) < key(best.ev)) {
      best.ev = e;
      best.valid = true;
    }
  };

  for (int i = 0; i + 1 < a.size(); ++i) {
    for (int j = 0; j + 1 < b.size(); ++j) {
      Vec2 p0 = a.points[i], p1 = a.points[i + 1];
      Vec2 q0 = b.points[j], q1 = b.points[j + 1];
      double s = 0.0, t = 0.0;
      if (segment_crossing(p0, p1, q0, q1, s, t)) {
        IntersectionEvent ev;
        ev.point = p0 + (p1 - p0) * s;
        ev.arrival_a = a.time_at(i) + s * a.dt;
        ev.arrival_b = b.time_at(j) + t * b.dt;
        ev.min_separation = 0.0;
        offer(ev);
        continue;
      }
      Vec2 cp, cq;
      double d = segment_distance(p0, p1, q0, q1, s, t, cp, cq);
      if (d <= radius) {
        IntersectionEvent ev;
        ev.point = (cp + cq) * 0.5;
        ev.arrival_a = a.time_at(i) + s * a.dt;
        ev.arrival_b = b.time_at(j) + t * b.dt;
        ev.min_separation = d;
        offer(ev);
      }
    }
  }
  if (!best.valid) return std::nullopt;
  return best.ev;
}

std::vector<double> heading_change(const KinematicProfile& prof, int window) {
  int n = prof.size();
  if (window < 1) throw InvalidInput("heading_change: window must be >= 1");
  if (window > n) throw InvalidInput("heading_change: window exceeds profile length");

  // prefix sums of wrapped per-step heading deltas
  std::vector<double> delta(n, 0.0);
  for (int i = 1; i < n; ++i) delta[i] = wrap_angle(prof.heading[i] - prof.heading[i - 1]);
  std::vector<double> out(n, 0.0);
  double run = 0.0;
  for (int i = 0; i < n; ++i) {
    run += delta[i];
    if (i - window >= 0) run -= delta[i - window];
    out[i] = run;
  }
  return out;
}

}  // namespace langtraj::geom
