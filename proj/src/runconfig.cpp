#include "langtraj/runconfig.hpp"

#include "json.hpp"

namespace langtraj {

void SynthSettings::validate() const {
  if (script.empty()) throw ConfigError("synth.script: must not be empty");
  if (n < 1) throw ConfigError("synth.n: must be >= 1");
  if (jitter < 0.0) throw ConfigError("synth.jitter: must be >= 0");
  if (random_scripts < 0) throw ConfigError("synth.random_scripts: must be >= 0");
}

namespace {

void validate_assemble(const data::AssembleConfig& a) {
  if (a.dt <= 0.0) throw ConfigError("assemble.dt: must be positive");
  if (a.past_steps < 2) throw ConfigError("assemble.past_steps: must be >= 2");
  if (a.future_steps < 1) throw ConfigError("assemble.future_steps: must be >= 1");
  if (a.max_agents < 1) throw ConfigError("assemble.max_agents: must be >= 1");
  if (a.max_gap < a.dt) throw ConfigError("assemble.max_gap: must be >= dt");
}

nlohmann::ordered_json synth_json(const SynthSettings& s) {
  nlohmann::ordered_json j;
  j["script"] = s.script;
  j["n"] = s.n;
  j["jitter"] = s.jitter;
  j["random_scripts"] = s.random_scripts;
  return j;
}

SynthSettings synth_from_json(const nlohmann::json& j) {
  SynthSettings s;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "script") s.script = it.value().get<std::string>();
      else if (k == "n") s.n = it.value().get<int>();
      else if (k == "jitter") s.jitter = it.value().get<double>();
      else if (k == "random_scripts") s.random_scripts = it.value().get<int>();
      else throw ConfigError("synth." + k + ": unknown key");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("synth." + k + ": wrong value type");
    }
  }
  return s;
}

nlohmann::ordered_json assemble_json(const data::AssembleConfig& a) {
  nlohmann::ordered_json j;
  j["dt"] = a.dt;
  j["past_steps"] = a.past_steps;
  j["future_steps"] = a.future_steps;
  j["max_agents"] = a.max_agents;
  j["max_gap"] = a.max_gap;
  return j;
}

data::AssembleConfig assemble_from_json(const nlohmann::json& j) {
  data::AssembleConfig a;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "dt") a.dt = it.value().get<double>();
      else if (k == "past_steps") a.past_steps = it.value().get<int>();
      else if (k == "future_steps") a.future_steps = it.value().get<int>();
      else if (k == "max_agents") a.max_agents = it.value().get<int>();
      else if (k == "max_gap") a.max_gap = it.value().get<double>();
      else throw ConfigError("assemble." + k + ": unknown key");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("assemble." + k + ": wrong value type");
    }
  }
  return a;
}

}  // namespace

void RunConfig::validate() const {
  synth.validate();
  validate_assemble(assemble);
  annotate.validate();
  model.validate();
  train.validate();
  eval.validate();
  // the modules exchange fixed-shape tensors, so the shared dimensions have a
  // single owner each; mismatches are config violations, not silent resizes
  if (model.past_steps != assemble.past_steps)
    throw ConfigError("model.past_steps: must match assemble.past_steps");
  if (model.future_steps != assemble.future_steps)
    throw ConfigError("model.future_steps: must match assemble.future_steps");
  if (model.max_agents != assemble.max_agents)
    throw ConfigError("model.max_agents: must match assemble.max_agents");
  if (model.max_tokens != annotate.max_tokens)
    throw ConfigError("model.max_tokens: must match annotate.max_tokens");
}

std::string RunConfig::to_json_text() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["synth"] = synth_json(synth);
  j["assemble"] = assemble_json(assemble);
  j["annotate"] = nlohmann::ordered_json::parse(annotate.to_json_text());
  j["model"] = nlohmann::ordered_json::parse(model.to_json_text());
  j["train"] = nlohmann::ordered_json::parse(train.to_json_text());
  j["eval"] = nlohmann::ordered_json::parse(eval.to_json_text());
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("run config: ") + e.what());
  }
  RunConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "seed") {
      try {
        c.seed = it.value().get<std::uint64_t>();
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("seed: wrong value type");
      }
    } else if (k == "synth") {
      c.synth = synth_from_json(it.value());
    } else if (k == "assemble") {
      c.assemble = assemble_from_json(it.value());
    } else if (k == "annotate") {
      c.annotate = annotate::AnnotateConfig::from_json_text(it.value().dump());
    } else if (k == "model") {
      c.model = model::ModelConfig::from_json_text(it.value().dump());
    } else if (k == "train") {
      c.train = train::TrainConfig::from_json_text(it.value().dump());
    } else if (k == "eval") {
      c.eval = eval::EvalOptions::from_json_text(it.value().dump());
    } else {
      throw ConfigError(k + ": unknown section");
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::string text;
  try {
    text = data::read_file(path);
  } catch (const std::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  try {
    return from_json_text(text);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace langtraj
