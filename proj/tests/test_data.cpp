#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <set>

#include "doctest.h"
#include "langtraj/scene.hpp"
#include "langtraj/synth.hpp"

using namespace langtraj;
using namespace langtraj::data;

namespace {

std::string simple_csv() {
  return "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n"
         "0.0,car_a,AGENT,1.0,2.0,PIT\n"
         "0.1,car_a,AGENT,1.5,2.0,PIT\n"
         "0.0,car_b,OTHERS,-3.0,0.5,PIT\n"
         "0.2,car_a,AGENT,2.0,2.0,PIT\n";
}

Scene grid_scene(int n_tracks, int steps, double dt = 0.1) {
  Scene sc;
  sc.scene_id = "grid";
  for (int k = 0; k < n_tracks; ++k) {
    Track tr;
    tr.object_type = "AGENT";
    for (int i = 0; i < steps; ++i)
      tr.samples.push_back({i * dt, {i * dt * 5.0, static_cast<double>(3 * k)}});
    sc.tracks["t" + std::to_string(k)] = tr;
  }
  return sc;
}

}  // namespace

TEST_CASE("scene csv parses with any column order") {
  auto res = parse_scene_csv(simple_csv());
  CHECK(res.scene.city == "PIT");
  REQUIRE(res.scene.tracks.count("car_a") == 1);
  CHECK(res.scene.tracks.at("car_a").samples.size() == 3);
  CHECK(res.scene.tracks.at("car_a").object_type == "AGENT");
  CHECK(res.duplicate_rows == 0);

  // shuffled header
  std::string shuffled =
      "X,CITY_NAME,TRACK_ID,Y,TIMESTAMP,OBJECT_TYPE\n"
      "1.0,MIA,t1,2.0,0.0,AGENT\n";
  auto r2 = parse_scene_csv(shuffled);
  CHECK(r2.scene.tracks.at("t1").samples[0].pos.x == 1.0);
  CHECK(r2.scene.city == "MIA");
}

TEST_CASE("scene csv errors carry line numbers and column names") {
  CHECK_THROWS_WITH_AS(parse_scene_csv("TIMESTAMP,TRACK_ID,X,Y,CITY_NAME\n"),
                       doctest::Contains("OBJECT_TYPE"), FormatError);
  std::string bad =
      "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n"
      "0.0,a,AGENT,1.0,2.0,PIT\n"
      "oops,a,AGENT,1.0,2.0,PIT\n";
  CHECK_THROWS_WITH_AS(parse_scene_csv(bad), doctest::Contains("line 3"), FormatError);
}

TEST_CASE("duplicate timestamp rows resolve last-wins and are counted") {
  std::string csv =
      "TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME\n"
      "0.0,a,AGENT,1.0,0.0,PIT\n"
      "0.0,a,AGENT,9.0,0.0,PIT\n";
  auto res = parse_scene_csv(csv);
  CHECK(res.duplicate_rows == 1);
  CHECK(res.scene.tracks.at("a").samples.size() == 1);
  CHECK(res.scene.tracks.at("a").samples[0].pos.x == 9.0);
}

TEST_CASE("scene csv roundtrips") {
  auto res = parse_scene_csv(simple_csv());
  std::string written = write_scene_csv(res.scene);
  auto back = parse_scene_csv(written);
  REQUIRE(back.scene.tracks.size() == res.scene.tracks.size());
  for (const auto& [id, tr] : res.scene.tracks) {
    const auto& btr = back.scene.tracks.at(id);
    REQUIRE(btr.samples.size() == tr.samples.size());
    for (size_t i = 0; i < tr.samples.size(); ++i) {
      CHECK(btr.samples[i].t == tr.samples[i].t);
      CHECK(btr.samples[i].pos.x == tr.samples[i].pos.x);
    }
  }
}

TEST_CASE("map json roundtrips and validates") {
  geom::MapGraph map;
  map.centerlines.push_back({1, {{0, 0}, {5, 0}, {10, 1}}});
  map.centerlines.push_back({2, {{0, 3}, {10, 3}}});
  auto back = parse_map(write_map(map));
  REQUIRE(back.centerlines.size() == 2);
  CHECK(back.centerlines[0].id == 1);
  CHECK(back.centerlines[0].polyline[2].y == 1.0);
  CHECK_THROWS_AS(parse_map("{"), FormatError);
  CHECK_THROWS_AS(parse_map("{\"centerlines\": [{\"id\": 1, \"polyline\": [[0,0]]}]}"),
                  FormatError);
}

TEST_CASE("assemble_examples splits past and future on the grid") {
  AssembleConfig cfg;
  auto scene = grid_scene(1, 50);
  auto examples = assemble_examples(scene, {}, cfg);
  REQUIRE(examples.size() == 1);
  const auto& ex = examples[0];
  CHECK(ex.example_id == "grid#t0");
  REQUIRE(ex.agents.size() == 1);
  const auto& a = ex.agents[0];
  CHECK(a.past.size() == 20);
  CHECK(a.future.size() == 30);
  CHECK(a.fully_valid());
  // last past point is step 19 of the source track
  CHECK(a.past.points.back().x == doctest::Approx(19 * 0.1 * 5.0));
  CHECK(a.future.points.front().x == doctest::Approx(20 * 0.1 * 5.0));
  CHECK(a.full().size() == 50);
}

TEST_CASE("assemble_examples ranks neighbors by distance at t=0") {
  AssembleConfig cfg;
  auto scene = grid_scene(4, 50);  // tracks at y = 0, 3, 6, 9
  auto examples = assemble_examples(scene, {}, cfg);
  REQUIRE(examples.size() == 4);
  auto it = std::find_if(examples.begin(), examples.end(),
                         [](const auto& e) { return e.example_id == "grid#t0"; });
  REQUIRE(it != examples.end());
  REQUIRE(it->neighbor_order.size() == 3);
  CHECK(it->neighbor_order[0] == "t1");
  CHECK(it->neighbor_order[1] == "t2");
  CHECK(it->neighbor_order[2] == "t3");
  CHECK(it->agents[1].agent_id == "t1");
}

TEST_CASE("assemble_examples drops tracks that never cover the window") {
  AssembleConfig cfg;
  auto scene = grid_scene(1, 50);
  Track shorty;
  shorty.object_type = "OTHERS";
  for (int i = 0; i < 10; ++i) shorty.samples.push_back({i * 0.1, {0.0, 50.0}});
  scene.tracks["short"] = shorty;
  auto examples = assemble_examples(scene, {}, cfg);
  REQUIRE(examples.size() == 1);  // only the full track becomes a target
  CHECK(examples[0].example_id == "grid#t0");
}

TEST_CASE("examples roundtrip through jsonl with captions and spans") {
  AssembleConfig cfg;
  auto examples = assemble_examples(grid_scene(2, 50), {}, cfg);
  REQUIRE(examples.size() >= 1);
  examples[0].caption = annotate::make_caption({annotate::Token::MoveFast}, 8);
  examples[0].caption_spans.push_back({annotate::Token::MoveFast, 0, 49, 0});

  std::string line = example_to_jsonl(examples[0]);
  auto back = example_from_jsonl(line);
  CHECK(back.example_id == examples[0].example_id);
  REQUIRE(back.caption.has_value());
  CHECK(back.caption->tokens == examples[0].caption->tokens);
  REQUIRE(back.caption_spans.size() == 1);
  CHECK(back.caption_spans[0].token == annotate::Token::MoveFast);
  REQUIRE(back.agents.size() == examples[0].agents.size());
  for (size_t a = 0; a < back.agents.size(); ++a) {
    const auto& pa = examples[0].agents[a];
    const auto& pb = back.agents[a];
    CHECK(pb.agent_id == pa.agent_id);
    REQUIRE(pb.past.size() == pa.past.size());
    REQUIRE(pb.future.size() == pa.future.size());
    for (int k = 0; k < pa.past.size(); ++k) {
      CHECK(pb.past.points[k].x == pa.past.points[k].x);
      CHECK(pb.past.points[k].y == pa.past.points[k].y);
    }
    CHECK(pb.past_mask == pa.past_mask);
    CHECK(pb.future_mask == pa.future_mask);
  }
  CHECK(back.neighbor_order == examples[0].neighbor_order);
}

TEST_CASE("examples file IO preserves order and content") {
  AssembleConfig cfg;
  auto examples = assemble_examples(grid_scene(3, 50), {}, cfg);
  std::string path = (std::filesystem::temp_directory_path() / "langtraj_examples.jsonl").string();
  write_examples_file(path, examples);
  auto back = read_examples_file(path);
  REQUIRE(back.size() == examples.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].example_id == examples[i].example_id);
    REQUIRE(back[i].agents.size() == examples[i].agents.size());
    for (size_t a = 0; a < back[i].agents.size(); ++a) {
      const auto& pa = examples[i].agents[a].past.points;
      const auto& pb = back[i].agents[a].past.points;
      REQUIRE(pa.size() == pb.size());
      for (size_t k = 0; k < pa.size(); ++k) {
        CHECK(pb[k].x == pa[k].x);
        CHECK(pb[k].y == pa[k].y);
      }
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("manifest verification detects tampering") {
  auto dir = std::filesystem::temp_directory_path() / "langtraj_manifest_test";
  std::filesystem::create_directories(dir);
  write_file((dir / "a.txt").string(), "hello");
  write_file((dir / "b.txt").string(), "world");
  write_manifest(dir.string(), {"a.txt", "b.txt"});
  CHECK_NOTHROW(verify_manifest(dir.string()));
  write_file((dir / "b.txt").string(), "tampered");
  CHECK_THROWS_WITH_AS(verify_manifest(dir.string()), doctest::Contains("b.txt"), FormatError);
  std::filesystem::remove((dir / "b.txt").string());
  CHECK_THROWS_WITH_AS(verify_manifest(dir.string()), doctest::Contains("missing"), FormatError);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// synthetic scripts

TEST_CASE("script library covers every content token with at least 20 scripts") {
  const auto& lib = script_library();
  CHECK(lib.size() >= 20);
  std::set<annotate::Token> covered;
  for (const auto& s : lib) {
    CHECK_NOTHROW(validate_script(s));
    for (auto t : s.expected_tokens) covered.insert(t);
  }
  for (int i = 0; i < annotate::kContentTokens; ++i) {
    annotate::Token t = static_cast<annotate::Token>(i);
    // Agent#k appears through Follow/Yield expansion, so any agent ref counts
    if (annotate::is_agent_ref(t)) continue;
    INFO("token ", annotate::token_name(t));
    CHECK(covered.count(t) == 1);
  }
  CHECK(std::any_of(covered.begin(), covered.end(),
                    [](annotate::Token t) { return annotate::is_agent_ref(t); }));
}

TEST_CASE("synth_scenes is deterministic and jitter perturbs positions") {
  const auto& script = find_script("turn_left");
  auto a = synth_scenes(script, 3, 9, 0.05);
  auto b = synth_scenes(script, 3, 9, 0.05);
  REQUIRE(a.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(a[i].scene.scene_id == b[i].scene.scene_id);
    for (const auto& [id, tr] : a[i].scene.tracks) {
      const auto& btr = b[i].scene.tracks.at(id);
      for (size_t k = 0; k < tr.samples.size(); ++k)
        CHECK(tr.samples[k].pos.x == btr.samples[k].pos.x);
    }
  }
  auto clean = synth_scenes(script, 1, 9, 0.0);
  auto noisy = synth_scenes(script, 1, 9, 0.05);
  bool differs = false;
  for (const auto& [id, tr] : clean[0].scene.tracks) {
    const auto& ntr = noisy[0].scene.tracks.at(id);
    for (size_t k = 0; k < tr.samples.size(); ++k)
      if (tr.samples[k].pos.x != ntr.samples[k].pos.x) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("unknown script names are rejected") {
  CHECK_THROWS_AS(find_script("no_such_script"), InvalidInput);
}

TEST_CASE("random scripts are valid and deterministic in the seed") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto script = random_script(rng, "r");
    CHECK_NOTHROW(validate_script(script));
    Rng rng2(seed);
    auto again = random_script(rng2, "r");
    REQUIRE(script.agents.size() == again.agents.size());
    CHECK(script.agents[0].speed0 == again.agents[0].speed0);
  }
}
