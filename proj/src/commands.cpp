#include "langtraj/commands.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "langtraj/synth.hpp"

namespace langtraj::cli {

using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// artifact directory plumbing

struct InputRecord {
  std::string path;
  std::string checksum;
};

// Collects everything a command writes so the closing manifest covers the
// whole directory, run config and input checksums included.
class ArtifactDir {
 public:
  ArtifactDir(std::string dir, const RunConfig& cfg, const std::vector<InputRecord>& inputs)
      : dir_(std::move(dir)) {
    if (dir_.empty()) throw ConfigError("out: output directory must be given");
    std::filesystem::create_directories(dir_);
    write("runconfig.json", cfg.to_json_text());
    json j;
    j["inputs"] = json::array();
    for (const auto& in : inputs) {
      j["inputs"].push_back({{"path", in.path}, {"fnv1a64", in.checksum}});
    }
    write("inputs.json", j.dump(2) + "\n");
  }

  void write(const std::string& name, std::string_view bytes) {
    data::write_file(dir_ + "/" + name, bytes);
    names_.push_back(name);
  }

  // for files written by module helpers that take a path
  std::string path(const std::string& name) {
    names_.push_back(name);
    return dir_ + "/" + name;
  }

  void finish() { data::write_manifest(dir_, names_); }

 private:
  std::string dir_;
  std::vector<std::string> names_;
};

InputRecord checksum_file(const std::string& path) {
  return {path, hex64(fnv1a64(data::read_file(path)))};
}

// ---------------------------------------------------------------------------
// shared helpers

// fixed-width ordered parallel map; each item derives its own seeds, so the
// schedule cannot change results, only their timing. The first exception is
// rethrown on the calling thread after the pool drains.
template <typename Fn>
void parallel_for(int n, Fn fn) {
  int workers = static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, 8);
  if (n < 2 || workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n && !failed.load(); i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<data::PredictionExample> load_examples(const std::string& path) {
  auto examples = data::read_examples_file(path);
  if (examples.empty()) throw InvalidInput(path + ": no examples");
  return examples;
}

// Builds the model from the checkpoint's own config line (it describes the
// stored weights; the run config's model section only drives training) and
// installs the weights.
model::Model load_model(const std::string& ckpt_path) {
  std::string config_line;
  ParamStore loaded = load_checkpoint(ckpt_path, &config_line);
  if (config_line.empty())
    throw FormatError(ckpt_path + ": checkpoint carries no model config");
  model::Model m(model::ModelConfig::from_json_text(config_line));
  for (auto& dst : m.gen_params().params()) {
    if (!loaded.has(dst.name))
      throw FormatError(ckpt_path + ": checkpoint missing tensor " + dst.name);
    const Param& src = loaded.get(dst.name);
    if (src.rows != dst.rows || src.cols != dst.cols)
      throw FormatError(ckpt_path + ": shape mismatch for tensor " + dst.name);
    dst.value = src.value;
  }
  return m;
}

std::vector<std::string> token_names(const std::vector<int>& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(annotate::token_name(static_cast<annotate::Token>(id)));
  return out;
}

json future_json(const std::vector<geom::Vec2>& pts) {
  json arr = json::array();
  for (const auto& p : pts) arr.push_back({p.x, p.y});
  return arr;
}

// net lateral displacement of the future relative to the heading at t=0;
// positive = left of travel direction
double net_lateral(const data::AgentTrack& agent, const std::vector<geom::Vec2>& future) {
  const auto& past = agent.past.points;
  geom::Vec2 h = past.back() - past[past.size() - 2];
  double n = h.norm();
  if (n < 1e-9) return 0.0;
  h = h * (1.0 / n);
  return h.cross(future.back() - past.back());
}

}  // namespace

// ---------------------------------------------------------------------------
// synth

void cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
  std::vector<data::ScenarioScript> scripts;
  if (cfg.synth.script == "all") {
    scripts = data::script_library();
  } else {
    scripts.push_back(data::find_script(cfg.synth.script));
  }
  for (int i = 0; i < cfg.synth.random_scripts; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "random_%04d", i);
    Rng rng(seed_combine(seed_combine(cfg.seed, "random-script"), static_cast<uint64_t>(i)));
    scripts.push_back(data::random_script(rng, name));
  }

  ArtifactDir art(out_dir, cfg, {});
  std::ostringstream expected;
  for (const auto& script : scripts) {
    auto scenes = data::synth_scenes(script, cfg.synth.n, cfg.seed, cfg.synth.jitter);
    for (const auto& sc : scenes) {
      art.write("scenes/" + sc.scene.scene_id + ".csv", data::write_scene_csv(sc.scene));
      art.write("maps/" + sc.scene.scene_id + ".json", data::write_map(sc.map));
      json line;
      line["scene_id"] = sc.scene.scene_id;
      line["target"] = sc.target_agent_id;
      json toks = json::array();
      for (annotate::Token t : sc.expected_tokens) toks.push_back(annotate::token_name(t));
      line["tokens"] = toks;
      expected << line.dump() << "\n";
    }
  }
  art.write("expected.jsonl", expected.str());
  art.finish();
}

// ---------------------------------------------------------------------------
// annotate

void cmd_annotate(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  data::verify_manifest(data_dir);
  std::string expected_text = data::read_file(data_dir + "/expected.jsonl");

  std::vector<InputRecord> inputs;
  inputs.push_back({data_dir + "/expected.jsonl", hex64(fnv1a64(expected_text))});

  // one entry per scene listed in the sidecar
  struct SceneFiles {
    std::string scene_id;
  };
  std::vector<SceneFiles> scenes;
  std::istringstream lines(expected_text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      scenes.push_back({j.at("scene_id").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(data_dir + "/expected.jsonl: " + e.what());
    }
  }

  std::vector<std::vector<data::PredictionExample>> per_scene(scenes.size());
  std::vector<std::string> scene_bytes(scenes.size()), map_bytes(scenes.size());
  for (size_t i = 0; i < scenes.size(); ++i) {
    scene_bytes[i] = data::read_file(data_dir + "/scenes/" + scenes[i].scene_id + ".csv");
    map_bytes[i] = data::read_file(data_dir + "/maps/" + scenes[i].scene_id + ".json");
  }

  struct Stats {
    int examples = 0, captioned = 0, rejected = 0;
    std::map<std::string, int> reasons;
  };
  std::vector<Stats> stats(scenes.size());

  parallel_for(static_cast<int>(scenes.size()), [&](int i) {
    auto parsed = data::parse_scene_csv(scene_bytes[i]);
    parsed.scene.scene_id = scenes[i].scene_id;  // the CSV carries no id column
    auto map = data::parse_map(map_bytes[i]);
    auto examples = data::assemble_examples(parsed.scene, map, cfg.assemble);
    for (auto& ex : examples) {
      Rng rng(seed_combine(seed_combine(cfg.seed, "annotate"), ex.example_id));
      auto res = annotate::annotate_example(ex, cfg.annotate, rng);
      ++stats[i].examples;
      if (res.caption) {
        ex.caption = res.caption;
        ex.caption_spans = res.kept;
        ++stats[i].captioned;
      } else {
        ++stats[i].rejected;
        ++stats[i].reasons[res.reason];
      }
    }
    per_scene[i] = std::move(examples);
  });

  std::vector<data::PredictionExample> all;
  Stats total;
  std::vector<std::vector<annotate::Token>> gt_caps;
  for (size_t i = 0; i < scenes.size(); ++i) {
    for (auto& ex : per_scene[i]) {
      if (ex.caption) gt_caps.push_back(ex.caption->tokens);
      all.push_back(std::move(ex));
    }
    total.examples += stats[i].examples;
    total.captioned += stats[i].captioned;
    total.rejected += stats[i].rejected;
    for (const auto& [r, n] : stats[i].reasons) total.reasons[r] += n;
  }

  ArtifactDir art(out_dir, cfg, inputs);
  data::write_examples_file(art.path("examples.jsonl"), all);
  json st;
  st["examples"] = total.examples;
  st["captioned"] = total.captioned;
  st["rejected"] = total.rejected;
  st["reasons"] = json::object();
  for (const auto& [r, n] : total.reasons) st["reasons"][r] = n;
  art.write("stats.json", st.dump(2) + "\n");
  art.write("histogram.csv", eval::histogram_to_csv(eval::token_distribution(gt_caps, {})));
  art.finish();
}

// ---------------------------------------------------------------------------
// train

void cmd_train(const RunConfig& cfg, const std::string& data_path, const std::string& out_dir) {
  auto examples = load_examples(data_path);

  model::Model m(cfg.model);
  Rng init_rng(seed_combine(cfg.seed, "init"));
  m.init_params(init_rng);

  train::Trainer trainer(m, cfg.train);
  ArtifactDir art(out_dir, cfg, {checksum_file(data_path)});

  std::ostringstream log;
  log << "step,mon,lang,generator_total,discriminator\n";
  const std::string cfg_line = m.config().to_json_text();
  trainer.run(examples, [&](int step, const train::LossBreakdown& l) {
    log << step << "," << format_double(l.mon) << "," << format_double(l.lang) << ","
        << format_double(l.generator_total) << "," << format_double(l.discriminator) << "\n";
    if (cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0) {
      save_checkpoint(m.gen_params(), art.path("checkpoint_" + std::to_string(step) + ".ckpt"),
                      cfg_line);
    }
  });

  save_checkpoint(m.gen_params(), art.path("checkpoint.ckpt"), cfg_line);
  save_opt_state(m.gen_params(), trainer.steps_done(), art.path("checkpoint.ckpt.opt"));
  save_checkpoint(m.disc_params(), art.path("checkpoint_disc.ckpt"), cfg_line);
  art.write("loss_log.csv", log.str());
  art.finish();
}

// ---------------------------------------------------------------------------
// eval

void cmd_eval(const RunConfig& cfg, const std::string& ckpt_path, const std::string& data_path,
              const std::string& out_dir) {
  auto examples = load_examples(data_path);
  model::Model m = load_model(ckpt_path);

  eval::EvalOptions opt = cfg.eval;
  opt.seed = cfg.seed;
  auto report = eval::evaluate(m, examples, opt);

  ArtifactDir art(out_dir, cfg, {checksum_file(ckpt_path), checksum_file(data_path)});
  art.write("report.txt", eval::report_to_text(report));
  art.write("report.csv", eval::report_to_csv(report));
  art.write("histogram.csv", eval::histogram_to_csv(report.histogram));
  art.finish();
}

// ---------------------------------------------------------------------------
// predict

void cmd_predict(const RunConfig& cfg, const std::string& ckpt_path, const std::string& data_path,
                 int n_samples, const std::string& out_dir) {
  if (n_samples < 1) throw ConfigError("predict.n: must be >= 1");
  auto examples = load_examples(data_path);
  model::Model m = load_model(ckpt_path);

  std::ostringstream out;
  for (const auto& ex : examples) {
    diff::Tape tape;
    auto b = m.bind(tape);
    model::RolloutOptions opt;
    opt.n_samples = n_samples;
    Rng z(seed_combine(seed_combine(cfg.seed, "predict-z"), ex.example_id));
    Rng g(seed_combine(seed_combine(cfg.seed, "predict-gumbel"), ex.example_id));
    auto res = m.rollout(b, ex, opt, z, g);

    json line;
    line["example_id"] = ex.example_id;
    line["samples"] = json::array();
    for (const auto& s : res.samples) {
      const auto& target = s.agents[ex.target];
      json sj;
      sj["caption"] = token_names(target.caption.tokens);
      sj["future"] = future_json(target.future);
      line["samples"].push_back(sj);
    }
    out << line.dump() << "\n";
  }

  ArtifactDir art(out_dir, cfg, {checksum_file(ckpt_path), checksum_file(data_path)});
  art.write("predictions.jsonl", out.str());
  art.finish();
}

// ---------------------------------------------------------------------------
// edit

void cmd_edit(const RunConfig& cfg, const std::string& ckpt_path, const std::string& data_path,
              const std::string& example_id, const std::string& swap_spec,
              const std::string& out_dir) {
  auto colon = swap_spec.find(':');
  if (colon == std::string::npos)
    throw ConfigError("edit.swap: expected From:To token names, got '" + swap_spec + "'");
  annotate::Token from = annotate::token_from_name(swap_spec.substr(0, colon));
  annotate::Token to = annotate::token_from_name(swap_spec.substr(colon + 1));

  auto examples = load_examples(data_path);
  auto it = std::find_if(examples.begin(), examples.end(),
                         [&](const auto& e) { return e.example_id == example_id; });
  if (it == examples.end()) throw InvalidInput(data_path + ": no example " + example_id);
  const data::PredictionExample& ex = *it;

  model::Model m = load_model(ckpt_path);
  const uint64_t z_seed = seed_combine(cfg.seed, "edit-z");
  const uint64_t g_seed = seed_combine(cfg.seed, "edit-gumbel");

  // sample the stored rollout once to obtain the caption being edited
  std::vector<annotate::Token> original;
  {
    diff::Tape tape;
    auto b = m.bind(tape);
    model::RolloutOptions opt;
    opt.n_samples = 1;
    Rng z(z_seed), g(g_seed);
    auto res = m.rollout(b, ex, opt, z, g);
    for (int id : res.samples[0].agents[ex.target].caption.tokens)
      original.push_back(static_cast<annotate::Token>(id));
  }

  std::vector<annotate::Token> edited = original;
  int swapped = 0;
  for (auto& t : edited) {
    if (t == from) {
      t = to;
      ++swapped;
    }
  }
  if (swapped == 0)
    throw InvalidInput("edit: token " + std::string(annotate::token_name(from)) +
                       " not present in the sampled caption");

  // both arms force the target caption so every noise stream stays aligned;
  // the decoders see identical inputs except for the swapped tokens
  auto run_arm = [&](const std::vector<annotate::Token>& caption) {
    diff::Tape tape;
    auto b = m.bind(tape);
    model::RolloutOptions opt;
    opt.n_samples = 1;
    opt.forced_target = caption;
    Rng z(z_seed), g(g_seed);
    auto res = m.rollout(b, ex, opt, z, g);
    return res.samples[0].agents[ex.target].future;
  };
  auto orig_future = run_arm(original);
  auto edit_future = run_arm(edited);

  json j;
  j["example_id"] = ex.example_id;
  j["swap"] = {{"from", annotate::token_name(from)},
               {"to", annotate::token_name(to)},
               {"count", swapped}};
  auto arm_json = [&](const std::vector<annotate::Token>& caption,
                      const std::vector<geom::Vec2>& future) {
    json a;
    json toks = json::array();
    for (annotate::Token t : caption) toks.push_back(annotate::token_name(t));
    a["tokens"] = toks;
    a["net_lateral"] = net_lateral(ex.target_agent(), future);
    a["future"] = future_json(future);
    return a;
  };
  j["original"] = arm_json(original, orig_future);
  j["edited"] = arm_json(edited, edit_future);

  std::ostringstream csv;
  csv << "step,orig_x,orig_y,edit_x,edit_y\n";
  for (size_t i = 0; i < orig_future.size(); ++i) {
    csv << i << "," << format_double(orig_future[i].x) << "," << format_double(orig_future[i].y)
        << "," << format_double(edit_future[i].x) << "," << format_double(edit_future[i].y)
        << "\n";
  }

  ArtifactDir art(out_dir, cfg, {checksum_file(ckpt_path), checksum_file(data_path)});
  art.write("edit.json", j.dump(2) + "\n");
  art.write("edit.csv", csv.str());
  art.finish();
}

// ---------------------------------------------------------------------------
// trace

void cmd_trace(const RunConfig& cfg, const std::string& ckpt_path, const std::string& data_path,
               const std::string& out_dir) {
  auto examples = load_examples(data_path);
  model::Model m = load_model(ckpt_path);

  std::vector<eval::TraceInput> traces;
  for (const auto& ex : examples) {
    diff::Tape tape;
    auto b = m.bind(tape);
    model::RolloutOptions opt;
    opt.n_samples = 1;
    Rng z(seed_combine(seed_combine(cfg.seed, "trace-z"), ex.example_id));
    Rng g(seed_combine(seed_combine(cfg.seed, "trace-gumbel"), ex.example_id));
    auto res = m.rollout(b, ex, opt, z, g);
    const auto& target = res.samples[0].agents[ex.target];
    traces.push_back({ex.example_id, target.caption.tokens, target.trace});
  }
  auto report = eval::attention_trace_report(traces);

  ArtifactDir art(out_dir, cfg, {checksum_file(ckpt_path), checksum_file(data_path)});
  art.write("attention.txt", eval::attention_report_to_text(report));
  art.write("attention.csv", eval::attention_report_to_csv(report));
  art.finish();
}

}  // namespace langtraj::cli
