#pragma once

// Rule-based caption annotation: threshold detectors over kinematics, lane
// association, and pairwise interaction checks, composed into a fixed-length
// token sequence with overlap sampling and rejection rules.

#include <optional>
#include <string>
#include <vector>

#include "langtraj/scene.hpp"
#include "langtraj/vocab.hpp"

namespace langtraj::annotate {

struct AnnotateConfig {
  // motion thresholds
  double fast_thresh = 8.0;        // m/s, MoveFast at or above
  double slow_thresh = 2.0;        // m/s, MoveSlow at or below (and moving)
  double stop_thresh = 0.3;        // m/s, Stop at or below
  double accel_thresh = 1.0;       // m/s^2 magnitude for SpeedUp/SlowDown
  double turn_thresh = M_PI / 6.0; // rad over the turn window
  int turn_window_steps = 10;      // 1 s at 10 Hz
  double min_dur = 0.5;            // seconds a token must persist
  double merge_gap = 0.2;          // seconds; shorter dropouts are bridged
  int smooth_window = 5;           // kinematics smoothing width (odd)

  // lane thresholds
  int lane_change_half_steps = 5;  // half-width of the LaneChange interval

  // interaction thresholds
  double follow_radius = 10.0;     // m, max along-path gap to the leader
  double follow_lateral = 2.0;     // m, max offset from the leader's path
  double align_angle = M_PI / 6.0; // rad, heading alignment for Follow
  double conflict_radius = 2.0;    // m, approach distance counting as conflict
  double yield_speed_drop = 0.5;   // m/s decrease required before the conflict
  int yield_window_steps = 10;     // trailing window for the speed drop

  // composition
  int max_tokens = 8;              // caption length M including specials
  int min_caption_steps = 10;      // reject shorter usable spans
  int oscillation_limit = 3;       // opposite-pair alternations triggering rejection
  int simultaneity_window = 3;     // steps; intervals starting this close share a group

  // Throws ConfigError naming the offending key.
  void validate() const;
  static AnnotateConfig from_json_text(std::string_view text);
  std::string to_json_text() const;
  uint64_t checksum() const;  // stamped into caption files
};

std::vector<TokenInterval> detect_motion_tokens(const geom::KinematicProfile& prof,
                                                const AnnotateConfig& cfg);

std::vector<TokenInterval> detect_lane_tokens(const geom::Trajectory& traj,
                                              const geom::MapGraph& map,
                                              const AnnotateConfig& cfg);

// Follow/Yield against each neighbor in the example; agent_ref is the
// neighbor's rank index (1-based position in example.agents).
std::vector<TokenInterval> detect_interaction_tokens(const data::PredictionExample& ex,
                                                     const AnnotateConfig& cfg);

struct ComposeResult {
  std::optional<Caption> caption;
  std::vector<TokenInterval> kept;  // surviving intervals backing the caption
  bool rejected = false;
  std::string reason;
};

// Groups intervals whose onsets fall within simultaneity_window steps of each
// other, keeps one per group (uniform via rng), orders survivors by onset,
// expands Follow/Yield into verb + Agent#k, applies the rejection rules, and
// truncates to fit max_tokens.
ComposeResult compose_caption(std::vector<TokenInterval> intervals, int usable_steps,
                              const AnnotateConfig& cfg, Rng& rng);

// Full per-example pipeline over the concatenated past+future track.
ComposeResult annotate_example(const data::PredictionExample& ex, const AnnotateConfig& cfg,
                               Rng& rng);

}  // namespace langtraj::annotate
