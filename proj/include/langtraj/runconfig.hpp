#pragma once

// Resolved run configuration: one JSON document holding every module's
// thresholds and hyperparameters plus the master seed. Commands resolve it
// fully before any work starts and serialize it verbatim into the output
// directory so reruns are reproducible.

#include <string>

#include "langtraj/annotate.hpp"
#include "langtraj/eval.hpp"
#include "langtraj/model.hpp"
#include "langtraj/train.hpp"

namespace langtraj {

struct SynthSettings {
  std::string script = "cruise_fast";  // library script name
  int n = 10;                          // scenes per script
  double jitter = 0.0;                 // meters, gaussian position noise
  int random_scripts = 0;              // extra randomly generated scripts

  void validate() const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  SynthSettings synth;
  data::AssembleConfig assemble;
  annotate::AnnotateConfig annotate;
  model::ModelConfig model;
  train::TrainConfig train;
  eval::EvalOptions eval;

  void validate() const;
  std::string to_json_text() const;  // deterministic key order
  static RunConfig from_json_text(const std::string& text);
  static RunConfig load(const std::string& path);  // file wrapper with path context
};

}  // namespace langtraj
