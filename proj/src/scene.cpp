#include "langtraj/scene.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace langtraj::data {

using json = nlohmann::ordered_json;

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view s, const char* field, int line_no) {
  double v;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw FormatError("line " + std::to_string(line_no) + ": " + field + " not numeric: '" +
                      std::string(s) + "'");
  return v;
}

}  // namespace

SceneParseResult parse_scene_csv(std::string_view bytes) {
  SceneParseResult res;
  size_t pos = 0;
  int line_no = 0;

  auto next_line = [&](std::string_view& line) {
    if (pos >= bytes.size()) return false;
    size_t nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) nl = bytes.size();
    line = bytes.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = nl + 1;
    ++line_no;
    return true;
  };

  std::string_view header;
  if (!next_line(header)) throw FormatError("empty scene file");
  auto cols = split(header, ',');
  const char* required[] = {"TIMESTAMP", "TRACK_ID", "OBJECT_TYPE", "X", "Y", "CITY_NAME"};
  int idx[6];
  for (int r = 0; r < 6; ++r) {
    idx[r] = -1;
    for (size_t c = 0; c < cols.size(); ++c)
      if (cols[c] == required[r]) idx[r] = static_cast<int>(c);
    if (idx[r] < 0) throw FormatError(std::string("missing column: ") + required[r]);
  }

  std::string_view line;
  while (next_line(line)) {
    if (line.empty()) continue;
    auto f = split(line, ',');
    if (f.size() < cols.size())
      throw FormatError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(cols.size()) + " fields, got " + std::to_string(f.size()));
    double t = parse_double(f[idx[0]], "TIMESTAMP", line_no);
    std::string track_id(f[idx[1]]);
    if (track_id.empty()) throw FormatError("line " + std::to_string(line_no) + ": empty TRACK_ID");
    double x = parse_double(f[idx[3]], "X", line_no);
    double y = parse_double(f[idx[4]], "Y", line_no);
    if (res.scene.city.empty()) res.scene.city = std::string(f[idx[5]]);

    Track& tr = res.scene.tracks[track_id];
    if (tr.samples.empty()) tr.object_type = std::string(f[idx[2]]);
    // last row wins on duplicate (track, timestamp)
    bool replaced = false;
    for (auto& s : tr.samples) {
      if (s.t == t) {
        s.pos = {x, y};
        ++res.duplicate_rows;
        replaced = true;
        break;
      }
    }
    if (!replaced) tr.samples.push_back({t, {x, y}});
  }

  for (auto& [id, tr] : res.scene.tracks) {
    std::stable_sort(tr.samples.begin(), tr.samples.end(),
                     [](const TrackSample& a, const TrackSample& b) { return a.t < b.t; });
  }
  if (res.duplicate_rows > 0)
    log_info("scene parse: " + std::to_string(res.duplicate_rows) +
             " duplicate (track, timestamp) rows resolved last-wins");
  return res;
}

std::string write_scene_csv(const Scene& scene) {
  std::string out = "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n";
  for (const auto& [id, tr] : scene.tracks) {
    for (const TrackSample& s : tr.samples) {
      out += format_double(s.t);
      out += ',';
      out += id;
      out += ',';
      out += tr.object_type;
      out += ',';
      out += format_double(s.pos.x);
      out += ',';
      out += format_double(s.pos.y);
      out += ',';
      out += scene.city;
      out += '\n';
    }
  }
  return out;
}

geom::MapGraph parse_map(std::string_view bytes) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::exception& e) {
    throw FormatError(std::string("map json: ") + e.what());
  }
  if (!j.is_object() || !j.contains("centerlines") || !j["centerlines"].is_array())
    throw FormatError("map json: missing 'centerlines' array");
  geom::MapGraph map;
  for (const auto& lane : j["centerlines"]) {
    if (!lane.contains("id") || !lane.contains("polyline"))
      throw FormatError("map json: centerline needs 'id' and 'polyline'");
    geom::LaneCenterline cl;
    cl.id = lane["id"].get<int>();
    for (const auto& pt : lane["polyline"]) {
      if (!pt.is_array() || pt.size() != 2)
        throw FormatError("map json: polyline vertex must be [x, y]");
      cl.polyline.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    map.centerlines.push_back(std::move(cl));
  }
  try {
    geom::validate(map);
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("map json: ") + e.what());
  }
  return map;
}

std::string write_map(const geom::MapGraph& map) {
  json j;
  j["centerlines"] = json::array();
  for (const auto& lane : map.centerlines) {
    json l;
    l["id"] = lane.id;
    l["polyline"] = json::array();
    for (const auto& p : lane.polyline) l["polyline"].push_back({p.x, p.y});
    j["centerlines"].push_back(l);
  }
  return j.dump();
}

// ---------------------------------------------------------------------------

bool AgentTrack::fully_valid() const {
  for (uint8_t m : past_mask)
    if (!m) return false;
  for (uint8_t m : future_mask)
    if (!m) return false;
  return true;
}

geom::Trajectory AgentTrack::full() const {
  geom::Trajectory t;
  t.dt = past.dt;
  t.t0 = past.t0;
  t.points = past.points;
  t.points.insert(t.points.end(), future.points.begin(), future.points.end());
  return t;
}

std::vector<uint8_t> AgentTrack::full_mask() const {
  std::vector<uint8_t> m = past_mask;
  m.insert(m.end(), future_mask.begin(), future_mask.end());
  return m;
}

namespace {

struct Resampled {
  std::vector<geom::Vec2> pos;
  std::vector<uint8_t> mask;
};

// Linear interpolation onto the grid; grid points farther than max_gap from
// a bracketing sample (or outside the track's span) are masked out.
Resampled resample(const Track& tr, double grid_t0, double dt, int steps, double max_gap) {
  Resampled out;
  out.pos.assign(steps, {0.0, 0.0});
  out.mask.assign(steps, 0);
  const auto& s = tr.samples;
  if (s.empty()) return out;
  size_t j = 0;
  for (int i = 0; i < steps; ++i) {
    double t = grid_t0 + i * dt;
    while (j + 1 < s.size() && s[j + 1].t <= t) ++j;
    // s[j].t <= t < s[j+1].t  (or t outside span)
    if (std::abs(s[j].t - t) < 1e-9) {
      out.pos[i] = s[j].pos;
      out.mask[i] = 1;
      continue;
    }
    if (j + 1 < s.size() && s[j].t <= t && t <= s[j + 1].t) {
      double gap = s[j + 1].t - s[j].t;
      if (gap <= max_gap + 1e-12) {
        double a = (t - s[j].t) / gap;
        out.pos[i] = s[j].pos + (s[j + 1].pos - s[j].pos) * a;
        out.mask[i] = 1;
      }
      continue;
    }
    if (j + 1 >= s.size() && std::abs(s.back().t - t) < 1e-9) {
      out.pos[i] = s.back().pos;
      out.mask[i] = 1;
    }
  }
  // pad masked positions with the nearest valid sample so trajectories stay finite
  int first_valid = -1;
  for (int i = 0; i < steps; ++i)
    if (out.mask[i]) {
      first_valid = i;
      break;
    }
  if (first_valid >= 0) {
    for (int i = 0; i < first_valid; ++i) out.pos[i] = out.pos[first_valid];
    geom::Vec2 last = out.pos[first_valid];
    for (int i = first_valid; i < steps; ++i) {
      if (out.mask[i])
        last = out.pos[i];
      else
        out.pos[i] = last;
    }
  }
  return out;
}

}  // namespace

std::vector<PredictionExample> assemble_examples(const Scene& scene, const geom::MapGraph& map,
                                                 const AssembleConfig& cfg) {
  if (cfg.past_steps < 2 || cfg.future_steps < 1 || cfg.max_agents < 1)
    throw InvalidInput("assemble_examples: bad window config");
  int total = cfg.past_steps + cfg.future_steps;

  double grid_t0 = std::numeric_limits<double>::infinity();
  for (const auto& [id, tr] : scene.tracks)
    if (!tr.samples.empty()) grid_t0 = std::min(grid_t0, tr.samples.front().t);
  if (!std::isfinite(grid_t0)) return {};

  // resample every track once
  std::map<std::string, Resampled> grids;
  for (const auto& [id, tr] : scene.tracks)
    grids[id] = resample(tr, grid_t0, cfg.dt, total, cfg.max_gap);

  int t0_step = cfg.past_steps - 1;  // last observed step
  std::vector<PredictionExample> out;
  for (const auto& [target_id, target_grid] : grids) {
    bool complete = std::all_of(target_grid.mask.begin(), target_grid.mask.end(),
                                [](uint8_t m) { return m != 0; });
    if (!complete) continue;

    PredictionExample ex;
    ex.scene_id = scene.scene_id;
    ex.example_id = scene.scene_id + "#" + target_id;
    ex.map = map;

    auto make_agent = [&](const std::string& id, const Resampled& g) {
      AgentTrack a;
      a.agent_id = id;
      a.past.dt = a.future.dt = cfg.dt;
      a.past.t0 = grid_t0;
      a.future.t0 = grid_t0 + cfg.past_steps * cfg.dt;
      a.past.points.assign(g.pos.begin(), g.pos.begin() + cfg.past_steps);
      a.future.points.assign(g.pos.begin() + cfg.past_steps, g.pos.end());
      a.past_mask.assign(g.mask.begin(), g.mask.begin() + cfg.past_steps);
      a.future_mask.assign(g.mask.begin() + cfg.past_steps, g.mask.end());
      return a;
    };
    ex.agents.push_back(make_agent(target_id, target_grid));

    // neighbors: valid at t=0, ranked by distance to the target at t=0
    geom::Vec2 tpos = target_grid.pos[t0_step];
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& [id, g] : grids) {
      if (id == target_id || !g.mask[t0_step]) continue;
      ranked.push_back({(g.pos[t0_step] - tpos).norm(), id});
    }
    std::sort(ranked.begin(), ranked.end());
    for (const auto& [dist, id] : ranked) {
      if (static_cast<int>(ex.agents.size()) >= cfg.max_agents) break;
      ex.agents.push_back(make_agent(id, grids[id]));
      ex.neighbor_order.push_back(id);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// shards

namespace {

json traj_points_json(const geom::Trajectory& t) {
  json arr = json::array();
  for (const auto& p : t.points) arr.push_back({p.x, p.y});
  return arr;
}

json mask_json(const std::vector<uint8_t>& m) {
  json arr = json::array();
  for (uint8_t v : m) arr.push_back(static_cast<int>(v));
  return arr;
}

std::vector<uint8_t> mask_from_json(const json& arr) {
  std::vector<uint8_t> m;
  for (const auto& v : arr) m.push_back(static_cast<uint8_t>(v.get<int>()));
  return m;
}

}  // namespace

std::string example_to_jsonl(const PredictionExample& ex) {
  json j;
  j["example_id"] = ex.example_id;
  j["scene_id"] = ex.scene_id;
  j["target"] = ex.target;
  j["dt"] = ex.agents.empty() ? 0.1 : ex.agents[0].past.dt;
  j["t0"] = ex.agents.empty() ? 0.0 : ex.agents[0].past.t0;
  j["agents"] = json::array();
  for (const auto& a : ex.agents) {
    json ja;
    ja["agent_id"] = a.agent_id;
    ja["past"] = traj_points_json(a.past);
    ja["future"] = traj_points_json(a.future);
    ja["past_mask"] = mask_json(a.past_mask);
    ja["future_mask"] = mask_json(a.future_mask);
    j["agents"].push_back(ja);
  }
  j["map"] = json::parse(write_map(ex.map));
  j["neighbor_order"] = ex.neighbor_order;
  if (ex.caption) {
    json jc = json::array();
    for (annotate::Token t : ex.caption->tokens) jc.push_back(annotate::token_name(t));
    j["caption"] = jc;
    json spans = json::array();
    for (const auto& iv : ex.caption_spans) {
      spans.push_back({{"token", annotate::token_name(iv.token)},
                       {"start", iv.start},
                       {"end", iv.end},
                       {"agent_ref", iv.agent_ref}});
    }
    j["caption_spans"] = spans;
  }
  return j.dump();
}

PredictionExample example_from_jsonl(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("example jsonl: ") + e.what());
  }
  PredictionExample ex;
  ex.example_id = j.at("example_id").get<std::string>();
  ex.scene_id = j.value("scene_id", std::string());
  ex.target = j.value("target", 0);
  double dt = j.value("dt", 0.1);
  double t0 = j.value("t0", 0.0);
  for (const auto& ja : j.at("agents")) {
    AgentTrack a;
    a.agent_id = ja.at("agent_id").get<std::string>();
    a.past.dt = a.future.dt = dt;
    a.past.t0 = t0;
    for (const auto& p : ja.at("past")) a.past.points.push_back({p[0], p[1]});
    for (const auto& p : ja.at("future")) a.future.points.push_back({p[0], p[1]});
    a.future.t0 = t0 + a.past.size() * dt;
    a.past_mask = mask_from_json(ja.at("past_mask"));
    a.future_mask = mask_from_json(ja.at("future_mask"));
    ex.agents.push_back(std::move(a));
  }
  ex.map = parse_map(j.at("map").dump());
  if (j.contains("neighbor_order"))
    ex.neighbor_order = j["neighbor_order"].get<std::vector<std::string>>();
  if (j.contains("caption")) {
    annotate::Caption c;
    for (const auto& name : j["caption"]) c.tokens.push_back(annotate::token_from_name(name.get<std::string>()));
    ex.caption = std::move(c);
    if (j.contains("caption_spans")) {
      for (const auto& js : j["caption_spans"]) {
        annotate::TokenInterval iv;
        iv.token = annotate::token_from_name(js.at("token").get<std::string>());
        iv.start = js.at("start").get<int>();
        iv.end = js.at("end").get<int>();
        iv.agent_ref = js.value("agent_ref", 0);
        ex.caption_spans.push_back(iv);
      }
    }
  }
  return ex;
}

void write_examples_file(const std::string& path, const std::vector<PredictionExample>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    out += example_to_jsonl(ex);
    out += '\n';
  }
  write_file(path, out);
}

std::vector<PredictionExample> read_examples_file(const std::string& path) {
  std::string bytes = read_file(path);
  std::vector<PredictionExample> out;
  size_t pos = 0;
  while (pos < bytes.size()) {
    size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) nl = bytes.size();
    std::string_view line(bytes.data() + pos, nl - pos);
    if (!line.empty()) out.push_back(example_from_jsonl(line));
    pos = nl + 1;
  }
  return out;
}

void write_manifest(const std::string& dir, const std::vector<std::string>& filenames) {
  json j;
  j["files"] = json::array();
  for (const auto& name : filenames) {
    std::string bytes = read_file(dir + "/" + name);
    j["files"].push_back({{"name", name}, {"fnv1a64", hex64(fnv1a64(bytes))}});
  }
  write_file(dir + "/manifest.json", j.dump(2) + "\n");
}

void verify_manifest(const std::string& dir) {
  json j = json::parse(read_file(dir + "/manifest.json"));
  for (const auto& f : j.at("files")) {
    std::string name = f.at("name").get<std::string>();
    std::string want = f.at("fnv1a64").get<std::string>();
    std::string bytes;
    try {
      bytes = read_file(dir + "/" + name);
    } catch (const std::exception&) {
      throw FormatError("manifest: missing file " + name);
    }
    if (hex64(fnv1a64(bytes)) != want) throw FormatError("manifest: checksum mismatch for " + name);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write file: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace langtraj::data
