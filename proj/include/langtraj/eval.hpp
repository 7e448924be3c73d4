#pragma once

// Metrics and reports: best-of-N displacement errors at fixed horizons,
// caption token recall, KDE entropy of the sample spread, information gain
// from caption conditioning, token histograms, attention traces.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "langtraj/model.hpp"

namespace langtraj::eval {

struct HorizonMetrics {
  double min_ade = 0.0;
  double min_fde = 0.0;
};

// samples: N futures of equal length; horizons in steps (1-based count).
// minADE and minFDE are minimized independently per horizon.
std::map<int, HorizonMetrics> displacement_metrics(
    const std::vector<std::vector<geom::Vec2>>& samples, const std::vector<geom::Vec2>& gt,
    const std::vector<int>& horizon_steps);

// |multiset(gt content) ∩ multiset(pred content)| / |gt content|; nullopt when
// the ground truth has no content tokens (reported as skipped)
std::optional<double> token_recall(const std::vector<annotate::Token>& predicted,
                                   const std::vector<annotate::Token>& gt);

// Per-step leave-one-out Gaussian KDE entropy averaged over steps. Scott's
// bandwidth per dimension with a 1e-3 m floor; identical samples therefore
// bottom out at ln(2*pi*1e-6) ~= -11.978 nats.
double kde_entropy(const std::vector<std::vector<geom::Vec2>>& samples);

struct InfoGain {
  double gain = 0.0;          // entropy(pad arm) - entropy(caption arm)
  double entropy_caption = 0.0;
  double entropy_pad = 0.0;
};

// Both arms share the noise stream; positive gain means captions tighten the
// prediction. Under the no_attention ablation both arms are pad-conditioned.
InfoGain information_gain(model::Model& m, const data::PredictionExample& ex, int n_samples,
                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// token histogram over the 12 display categories (Stop excluded, Agent#k
// collapsed into one bin)

struct TokenHistogram {
  std::vector<std::string> categories;
  std::vector<double> gt;         // normalized frequencies
  std::vector<double> predicted;  // zero row when no predictions exist
  bool predicted_empty = false;
};

TokenHistogram token_distribution(const std::vector<std::vector<annotate::Token>>& gt_captions,
                                  const std::vector<std::vector<annotate::Token>>& predicted);

std::string histogram_to_csv(const TokenHistogram& h);

// ---------------------------------------------------------------------------
// attention traces

struct TraceInput {
  std::string example_id;
  std::vector<int> tokens;  // caption token ids, length M
  model::DecoderTrace trace;
};

struct TraceEntry {
  std::string example_id;
  bool empty = false;
  std::string reason;               // set when empty
  std::vector<int> top_position;    // per step: caption position with max weight
  std::vector<std::string> top_token;
  std::vector<int> transition_steps;  // steps whose argmax differs from the previous
  // probe weights at fixed steps: probe_steps[i] -> weights row (length M)
  std::vector<int> probe_steps;
  std::vector<std::vector<double>> probe_weights;
};

struct AttentionReport {
  std::vector<TraceEntry> entries;
};

AttentionReport attention_trace_report(const std::vector<TraceInput>& traces);

std::string attention_report_to_text(const AttentionReport& r);
std::string attention_report_to_csv(const AttentionReport& r);

// ---------------------------------------------------------------------------
// whole-dataset evaluation

struct EvalOptions {
  int n_samples = 6;
  std::vector<double> horizons_s = {1.0, 3.0};
  bool with_info_gain = true;
  int info_gain_samples = 12;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json_text() const;
  static EvalOptions from_json_text(const std::string& text);
};

struct ExampleEval {
  std::string example_id;
  std::map<int, HorizonMetrics> horizons;  // keyed by steps
  std::optional<double> recall;
  double entropy = 0.0;
  std::optional<double> info_gain;
};

struct EvalReport {
  std::vector<ExampleEval> examples;
  std::map<int, HorizonMetrics> mean_horizons;
  std::optional<double> mean_recall;  // over examples with gt captions
  double mean_entropy = 0.0;
  std::optional<double> mean_info_gain;
  TokenHistogram histogram;
};

EvalReport evaluate(model::Model& m, const std::vector<data::PredictionExample>& data,
                    const EvalOptions& opt);

std::string report_to_text(const EvalReport& r);
std::string report_to_csv(const EvalReport& r);

// teacher-forced caption accuracy helper: argmax tokens under teacher forcing,
// scored with token_recall against the ground truth
std::optional<double> teacher_forced_recall(model::Model& m, const data::PredictionExample& ex,
                                            std::uint64_t seed);

}  // namespace langtraj::eval
