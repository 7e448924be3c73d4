#pragma once

// Command implementations behind the CLI. Each command resolves its inputs,
// does the work, and writes an artifact directory containing the resolved run
// config, input checksums, outputs, and a manifest. Throws ConfigError for
// config violations and the data errors of the modules it drives; exit-code
// mapping lives in the CLI entry point.

#include <string>

#include "langtraj/runconfig.hpp"

namespace langtraj::cli {

// scenes + maps + expected-token sidecar from the scripted library
void cmd_synth(const RunConfig& cfg, const std::string& out_dir);

// scenes dir -> captioned examples.jsonl + rejection stats + token histogram
void cmd_annotate(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir);

// examples.jsonl -> checkpoints + loss log
void cmd_train(const RunConfig& cfg, const std::string& data_path, const std::string& out_dir);

// checkpoint + examples -> metric report files
void cmd_eval(const RunConfig& cfg, const std::string& ckpt_path, const std::string& data_path,
              const std::string& out_dir);

// checkpoint + examples -> N sampled futures + captions per example
void cmd_predict(const RunConfig& cfg, const std::string& ckpt_path, const std::string& data_path,
                 int n_samples, const std::string& out_dir);

// token substitution on a stored rollout; swap_spec is "From:To" token names
void cmd_edit(const RunConfig& cfg, const std::string& ckpt_path, const std::string& data_path,
              const std::string& example_id, const std::string& swap_spec,
              const std::string& out_dir);

// checkpoint + examples -> attention trace report
void cmd_trace(const RunConfig& cfg, const std::string& ckpt_path, const std::string& data_path,
               const std::string& out_dir);

}  // namespace langtraj::cli
