#pragma once

// Trajectory geometry: finite-difference kinematics, centerline projection,
// path conflict detection, windowed heading change.

#include <optional>
#include <vector>

#include "langtraj/common.hpp"

namespace langtraj::geom {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double cross(Vec2 o) const { return x * o.y - y * o.x; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

// Uniformly sampled 2D track. Time of point i is t0 + i*dt.
struct Trajectory {
  std::vector<Vec2> points;
  double t0 = 0.0;
  double dt = 0.1;

  int size() const { return static_cast<int>(points.size()); }
  double time_at(int i) const { return t0 + i * dt; }
  double duration() const { return (size() - 1) * dt; }
};

// Throws InvalidInput when the trajectory has < 2 points, a non-positive dt,
// or non-finite coordinates.
void validate(const Trajectory& traj);

// Per-step derived motion quantities, all the same length as the trajectory.
struct KinematicProfile {
  std::vector<double> speed;     // m/s, >= 0
  std::vector<double> accel;     // m/s^2, signed (tangential)
  std::vector<double> heading;   // rad, wrapped to (-pi, pi]
  std::vector<double> yaw_rate;  // rad/s, signed
  double dt = 0.1;

  int size() const { return static_cast<int>(speed.size()); }
};

struct LaneCenterline {
  int id = 0;
  std::vector<Vec2> polyline;  // >= 2 vertices, consecutive vertices distinct
};

struct MapGraph {
  std::vector<LaneCenterline> centerlines;

  bool empty() const { return centerlines.empty(); }
};

void validate(const MapGraph& map);

struct LaneProjection {
  int lane_id = 0;
  double arc_position = 0.0;    // meters along the centerline at the projection
  double lateral_offset = 0.0;  // meters, unsigned distance to the centerline
};

struct IntersectionEvent {
  Vec2 point;                   // conflict location
  double arrival_a = 0.0;       // interpolated time agent a reaches it
  double arrival_b = 0.0;
  double min_separation = 0.0;  // 0 for a true crossing, else closest approach
};

// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

// Central finite differences (one-sided at the ends) with moving-average
// smoothing of width smooth_window (odd, >= 1; truncated at the boundaries).
// Velocity is smoothed before speed/heading are derived; acceleration is the
// smoothed derivative of the smoothed speed; yaw rate differentiates the
// wrapped heading. Zero-speed steps keep the last known heading and report a
// zero yaw rate, so the output is always finite.
KinematicProfile compute_kinematics(const Trajectory& traj, int smooth_window = 5);

// Nearest centerline to a point. Distance ties go to the lowest lane id.
// Throws InvalidInput on an empty map.
LaneProjection closest_centerline(Vec2 p, const MapGraph& map);

// Earliest conflict between two paths: a segment crossing or an approach
// within `radius`. Candidates are ordered by (min arrival, arrival sum) so the
// result is symmetric in its arguments up to swapping the arrival fields.
// Returns nullopt when the paths never conflict.
std::optional<IntersectionEvent> path_intersection(const Trajectory& a, const Trajectory& b,
                                                   double radius = 2.0);

// Signed accumulated heading change over the trailing `window` steps (partial
// sums near the start). window must be in [1, profile length].
std::vector<double> heading_change(const KinematicProfile& prof, int window);

}  // namespace langtraj::geom
