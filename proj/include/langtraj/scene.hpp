#pragma once

// Scene ingest and example assembly: CSV track logs, JSON lane maps, uniform
// resampling onto the prediction grid, JSONL shards with checksums.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "langtraj/geometry.hpp"
#include "langtraj/vocab.hpp"

namespace langtraj::data {

struct TrackSample {
  double t = 0.0;
  geom::Vec2 pos;
};

struct Track {
  std::string object_type;  // free-form metadata from the log
  std::vector<TrackSample> samples;  // strictly increasing timestamps
};

struct Scene {
  std::string scene_id;
  std::string city;
  std::map<std::string, Track> tracks;  // keyed by track id
};

struct SceneParseResult {
  Scene scene;
  int duplicate_rows = 0;  // (track, timestamp) collisions resolved last-wins
};

// Columns (any order, located by header name):
//   TIMESTAMP, TRACK_ID, OBJECT_TYPE, X, Y, CITY_NAME
// Throws FormatError with the line number for malformed rows and a named
// message for missing columns.
SceneParseResult parse_scene_csv(std::string_view bytes);

std::string write_scene_csv(const Scene& scene);

// {"centerlines": [{"id": int, "polyline": [[x, y], ...]}, ...]}
geom::MapGraph parse_map(std::string_view bytes);
std::string write_map(const geom::MapGraph& map);

// ---------------------------------------------------------------------------
// prediction examples

struct AgentTrack {
  std::string agent_id;
  geom::Trajectory past;    // past_steps points ending at t=0
  geom::Trajectory future;  // future_steps points after t=0
  std::vector<uint8_t> past_mask;    // 1 = real sample, 0 = padding
  std::vector<uint8_t> future_mask;

  bool fully_valid() const;
  // concatenated past+future track (annotation operates on the full span)
  geom::Trajectory full() const;
  std::vector<uint8_t> full_mask() const;
};

struct PredictionExample {
  std::string example_id;
  std::string scene_id;
  int target = 0;                      // index into agents; always 0 here
  std::vector<AgentTrack> agents;      // [0] target, then neighbors by rank
  geom::MapGraph map;
  std::optional<annotate::Caption> caption;            // target's caption, if annotated
  std::vector<annotate::TokenInterval> caption_spans;  // intervals backing the caption
  std::vector<std::string> neighbor_order;             // rank k -> agent_id (k = 1..)

  const AgentTrack& target_agent() const { return agents[target]; }
};

struct AssembleConfig {
  double dt = 0.1;
  int past_steps = 20;
  int future_steps = 30;
  int max_agents = 5;     // target + up to 4 neighbors
  double max_gap = 0.3;   // seconds; larger sampling gaps are masked out
};

// One example per track that covers the full window with real samples.
// Neighbors are the nearest (at t=0) other tracks with a valid t=0 sample.
std::vector<PredictionExample> assemble_examples(const Scene& scene, const geom::MapGraph& map,
                                                 const AssembleConfig& cfg);

// ---------------------------------------------------------------------------
// shards

std::string example_to_jsonl(const PredictionExample& ex);
PredictionExample example_from_jsonl(std::string_view line);

void write_examples_file(const std::string& path, const std::vector<PredictionExample>& examples);
std::vector<PredictionExample> read_examples_file(const std::string& path);

// manifest.json: {"files": [{"name": ..., "fnv1a64": ...}, ...]}
void write_manifest(const std::string& dir, const std::vector<std::string>& filenames);
// Throws FormatError when a listed file is missing or its checksum differs.
void verify_manifest(const std::string& dir);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace langtraj::data
