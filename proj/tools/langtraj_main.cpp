// langtraj CLI: synthesize scenes, annotate captions, train, evaluate,
// predict, edit tokens on a stored rollout, trace attention.
//
// Exit codes: 0 success, 1 config/data error (message names the key or file),
// 2 usage error. Set LANGTRAJ_LOG=info|debug for progress output.

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "langtraj/commands.hpp"

namespace {

struct Cli {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;

  // per-command inputs
  std::string data;
  std::string checkpoint;
  std::string example_id;
  std::string swap_spec;
  int n = 0;
  bool n_set = false;

  // synth overrides
  std::string script;
  double jitter = 0.0;
  bool jitter_set = false;
  int random_scripts = 0;
  bool random_set = false;
};

void add_common(CLI::App* sub, Cli& cli) {
  sub->add_option("--config", cli.config_path, "run config JSON (defaults apply when omitted)");
  auto* seed = sub->add_option("--seed", cli.seed, "master seed, overrides the config");
  seed->each([&cli](const std::string&) { cli.seed_set = true; });
  sub->add_option("--out", cli.out_dir, "output directory")->required();
}

langtraj::RunConfig resolve(const Cli& cli) {
  langtraj::RunConfig cfg;
  if (!cli.config_path.empty()) cfg = langtraj::RunConfig::load(cli.config_path);
  if (cli.seed_set) cfg.seed = cli.seed;
  // one master seed; the per-module seed fields mirror it so the serialized
  // config is self-contained
  cfg.train.seed = cfg.seed;
  cfg.eval.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajectory prediction with maneuver-token captions"};
  app.require_subcommand(1);
  Cli cli;

  auto* synth = app.add_subcommand("synth", "generate scripted scenes with expected tokens");
  add_common(synth, cli);
  synth->add_option("--script", cli.script, "library script name, or 'all'");
  auto* synth_n = synth->add_option("--n", cli.n, "scenes per script");
  auto* synth_jitter = synth->add_option("--jitter", cli.jitter, "position noise sigma, meters");
  auto* synth_random =
      synth->add_option("--random", cli.random_scripts, "extra randomly generated scripts");

  auto* annotate = app.add_subcommand("annotate", "caption scenes into training examples");
  add_common(annotate, cli);
  annotate->add_option("--data", cli.data, "synth output directory")->required();

  auto* train = app.add_subcommand("train", "train the model on captioned examples");
  add_common(train, cli);
  train->add_option("--data", cli.data, "examples.jsonl path")->required();

  auto* eval_cmd = app.add_subcommand("eval", "compute metrics for a checkpoint");
  add_common(eval_cmd, cli);
  eval_cmd->add_option("--checkpoint", cli.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--data", cli.data, "examples.jsonl path")->required();

  auto* predict = app.add_subcommand("predict", "sample N futures with captions per example");
  add_common(predict, cli);
  predict->add_option("--checkpoint", cli.checkpoint, "model checkpoint")->required();
  predict->add_option("--data", cli.data, "examples.jsonl path")->required();
  auto* predict_n = predict->add_option("--n", cli.n, "samples per example");

  auto* edit = app.add_subcommand("edit", "swap a caption token and re-decode");
  add_common(edit, cli);
  edit->add_option("--checkpoint", cli.checkpoint, "model checkpoint")->required();
  edit->add_option("--data", cli.data, "examples.jsonl path")->required();
  edit->add_option("--example", cli.example_id, "example id to edit")->required();
  edit->add_option("--swap", cli.swap_spec, "From:To token names")->required();

  auto* trace = app.add_subcommand("trace", "report token attention over decode steps");
  add_common(trace, cli);
  trace->add_option("--checkpoint", cli.checkpoint, "model checkpoint")->required();
  trace->add_option("--data", cli.data, "examples.jsonl path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }

  try {
    langtraj::RunConfig cfg = resolve(cli);
    if (app.got_subcommand(synth)) {
      if (!cli.script.empty()) cfg.synth.script = cli.script;
      if (synth_n->count() > 0) cfg.synth.n = cli.n;
      if (synth_jitter->count() > 0) cfg.synth.jitter = cli.jitter;
      if (synth_random->count() > 0) cfg.synth.random_scripts = cli.random_scripts;
      cfg.synth.validate();
      langtraj::cli::cmd_synth(cfg, cli.out_dir);
    } else if (app.got_subcommand(annotate)) {
      langtraj::cli::cmd_annotate(cfg, cli.data, cli.out_dir);
    } else if (app.got_subcommand(train)) {
      langtraj::cli::cmd_train(cfg, cli.data, cli.out_dir);
    } else if (app.got_subcommand(eval_cmd)) {
      langtraj::cli::cmd_eval(cfg, cli.checkpoint, cli.data, cli.out_dir);
    } else if (app.got_subcommand(predict)) {
      int n = predict_n->count() > 0 ? cli.n : cfg.eval.n_samples;
      langtraj::cli::cmd_predict(cfg, cli.checkpoint, cli.data, n, cli.out_dir);
    } else if (app.got_subcommand(edit)) {
      langtraj::cli::cmd_edit(cfg, cli.checkpoint, cli.data, cli.example_id, cli.swap_spec,
                              cli.out_dir);
    } else if (app.got_subcommand(trace)) {
      langtraj::cli::cmd_trace(cfg, cli.checkpoint, cli.data, cli.out_dir);
    }
  } catch (const langtraj::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
