#include "langtraj/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>

#include "json.hpp"

namespace langtraj::eval {

// ---------------------------------------------------------------------------
// displacement metrics

std::map<int, HorizonMetrics> displacement_metrics(
    const std::vector<std::vector<geom::Vec2>>& samples, const std::vector<geom::Vec2>& gt,
    const std::vector<int>& horizon_steps) {
  if (samples.empty()) throw InvalidInput("displacement_metrics: need at least one sample");
  const int t = static_cast<int>(gt.size());
  for (const auto& s : samples) {
    if (static_cast<int>(s.size()) != t)
      throw InvalidInput("displacement_metrics: sample length differs from ground truth");
  }
  std::map<int, HorizonMetrics> out;
  for (int h : horizon_steps) {
    if (h < 1 || h > t)
      throw InvalidInput("displacement_metrics: horizon " + std::to_string(h) +
                         " beyond trajectory of " + std::to_string(t) + " steps");
    HorizonMetrics m;
    // minADE and minFDE are minimized independently: a sample can win one
    // horizon metric without winning the other
    double best_ade = std::numeric_limits<double>::infinity();
    double best_fde = std::numeric_limits<double>::infinity();
    for (const auto& s : samples) {
      double acc = 0.0;
      for (int i = 0; i < h; ++i) acc += (s[i] - gt[i]).norm();
      best_ade = std::min(best_ade, acc / h);
      best_fde = std::min(best_fde, (s[h - 1] - gt[h - 1]).norm());
    }
    m.min_ade = best_ade;
    m.min_fde = best_fde;
    out[h] = m;
  }
  return out;
}

// ---------------------------------------------------------------------------
// token recall

std::optional<double> token_recall(const std::vector<annotate::Token>& predicted,
                                   const std::vector<annotate::Token>& gt) {
  std::map<annotate::Token, int> want;
  int total = 0;
  for (annotate::Token tk : gt) {
    if (!annotate::is_content(tk)) continue;
    ++want[tk];
    ++total;
  }
  if (total == 0) return std::nullopt;
  int hit = 0;
  for (annotate::Token tk : predicted) {
    if (!annotate::is_content(tk)) continue;
    auto it = want.find(tk);
    if (it != want.end() && it->second > 0) {
      --it->second;
      ++hit;
    }
  }
  return static_cast<double>(hit) / total;
}

// ---------------------------------------------------------------------------
// KDE entropy

namespace {

constexpr double kBandwidthFloor = 1e-3;  // meters

// leave-one-out entropy of one step's point cloud under a product-Gaussian
// kernel with Scott's-rule bandwidth per dimension
double step_entropy(const std::vector<geom::Vec2>& pts) {
  const int n = static_cast<int>(pts.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : pts) {
    mx += p.x;
    my += p.y;
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0;
  for (const auto& p : pts) {
    vx += (p.x - mx) * (p.x - mx);
    vy += (p.y - my) * (p.y - my);
  }
  vx /= n - 1;
  vy /= n - 1;
  const double scott = std::pow(static_cast<double>(n), -1.0 / 6.0);
  const double hx = std::max(std::sqrt(vx) * scott, kBandwidthFloor);
  const double hy = std::max(std::sqrt(vy) * scott, kBandwidthFloor);
  const double norm = 1.0 / (2.0 * M_PI * hx * hy);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double dens = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = (pts[i].x - pts[j].x) / hx;
      const double dy = (pts[i].y - pts[j].y) / hy;
      dens += norm * std::exp(-0.5 * (dx * dx + dy * dy));
    }
    dens /= n - 1;
    acc += -std::log(dens);
  }
  return acc / n;
}

}  // namespace

double kde_entropy(const std::vector<std::vector<geom::Vec2>>& samples) {
  const int n = static_cast<int>(samples.size());
  if (n < 2) throw InvalidInput("kde_entropy: need at least 2 samples");
  const int t = static_cast<int>(samples[0].size());
  if (t == 0) throw InvalidInput("kde_entropy: empty trajectories");
  for (const auto& s : samples) {
    if (static_cast<int>(s.size()) != t)
      throw InvalidInput("kde_entropy: samples differ in length");
  }
  double acc = 0.0;
  std::vector<geom::Vec2> step(n);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < n; ++j) step[j] = samples[j][i];
    acc += step_entropy(step);
  }
  return acc / t;
}

// ---------------------------------------------------------------------------
// information gain

namespace {

std::vector<std::vector<geom::Vec2>> target_futures(const model::RolloutResult& res, int target) {
  std::vector<std::vector<geom::Vec2>> out;
  out.reserve(res.samples.size());
  for (const auto& s : res.samples) out.push_back(s.agents[target].future);
  return out;
}

}  // namespace

InfoGain information_gain(model::Model& m, const data::PredictionExample& ex, int n_samples,
                          std::uint64_t seed) {
  if (n_samples < 2) throw InvalidInput("information_gain: need at least 2 samples");
  const std::vector<annotate::Token> all_pad(m.config().max_tokens, annotate::Token::Pad);
  const std::uint64_t z_seed = seed_combine(seed, "ig-z");
  const std::uint64_t g_seed = seed_combine(seed, "ig-gumbel");

  auto run_arm = [&](bool pad_arm) {
    diff::Tape tape;
    auto b = m.bind(tape);
    model::RolloutOptions opt;
    opt.n_samples = n_samples;
    // the no_attention ablation never sees tokens, so both arms are padded and
    // the gain collapses to exactly zero by construction
    if (pad_arm || m.config().no_attention) opt.forced_all = all_pad;
    Rng z(z_seed), g(g_seed);  // shared noise: arms differ only in conditioning
    auto res = m.rollout(b, ex, opt, z, g);
    return kde_entropy(target_futures(res, ex.target));
  };

  InfoGain out;
  out.entropy_caption = run_arm(false);
  out.entropy_pad = run_arm(true);
  out.gain = out.entropy_pad - out.entropy_caption;
  return out;
}

// ---------------------------------------------------------------------------
// token histogram

namespace {

// display bins; Stop occurrences are dropped and Agent#1..4 share one bin
const std::array<const char*, 12> kDisplayBins = {
    "MoveFast",       "MoveSlow",        "SpeedUp",  "SlowDown", "TurnLeft", "TurnRight",
    "LaneChangeLeft", "LaneChangeRight", "LaneKeep", "Agent#k",  "Follow",   "Yield",
};

int display_bin(annotate::Token t) {
  if (annotate::is_agent_ref(t)) return 9;
  switch (t) {
    case annotate::Token::MoveFast: return 0;
    case annotate::Token::MoveSlow: return 1;
    case annotate::Token::SpeedUp: return 2;
    case annotate::Token::SlowDown: return 3;
    case annotate::Token::TurnLeft: return 4;
    case annotate::Token::TurnRight: return 5;
    case annotate::Token::LaneChangeLeft: return 6;
    case annotate::Token::LaneChangeRight: return 7;
    case annotate::Token::LaneKeep: return 8;
    case annotate::Token::Follow: return 10;
    case annotate::Token::Yield: return 11;
    default: return -1;  // Stop and specials are not displayed
  }
}

std::vector<double> bin_series(const std::vector<std::vector<annotate::Token>>& captions) {
  std::vector<double> counts(kDisplayBins.size(), 0.0);
  double total = 0.0;
  for (const auto& cap : captions) {
    for (annotate::Token t : cap) {
      int b = display_bin(t);
      if (b < 0) continue;
      counts[b] += 1.0;
      total += 1.0;
    }
  }
  if (total > 0.0) {
    for (double& c : counts) c /= total;
  }
  return counts;
}

}  // namespace

TokenHistogram token_distribution(const std::vector<std::vector<annotate::Token>>& gt_captions,
                                  const std::vector<std::vector<annotate::Token>>& predicted) {
  TokenHistogram h;
  h.categories.assign(kDisplayBins.begin(), kDisplayBins.end());
  h.gt = bin_series(gt_captions);
  h.predicted = bin_series(predicted);
  double psum = 0.0;
  for (double v : h.predicted) psum += v;
  h.predicted_empty = psum == 0.0;
  return h;
}

std::string histogram_to_csv(const TokenHistogram& h) {
  std::ostringstream os;
  os << "category,gt,predicted\n";
  for (size_t i = 0; i < h.categories.size(); ++i) {
    os << h.categories[i] << "," << format_double(h.gt[i]) << "," << format_double(h.predicted[i])
       << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// attention traces

AttentionReport attention_trace_report(const std::vector<TraceInput>& traces) {
  AttentionReport rep;
  for (const auto& in : traces) {
    TraceEntry e;
    e.example_id = in.example_id;
    const auto& w = in.trace.token_weights;
    if (w.empty()) {
      e.empty = true;
      e.reason = "token attention disabled";
      rep.entries.push_back(std::move(e));
      continue;
    }
    const int steps = static_cast<int>(w.size());
    int prev = -1;
    for (int s = 0; s < steps; ++s) {
      int best = 0;
      for (int m = 1; m < static_cast<int>(w[s].size()); ++m) {
        if (w[s][m] > w[s][best]) best = m;
      }
      e.top_position.push_back(best);
      int tok = best < static_cast<int>(in.tokens.size()) ? in.tokens[best] : 0;
      e.top_token.push_back(annotate::token_name(static_cast<annotate::Token>(tok)));
      if (prev >= 0 && best != prev) e.transition_steps.push_back(s);
      prev = best;
    }
    for (int probe : {0, 15, 29}) {
      int s = std::min(probe, steps - 1);
      e.probe_steps.push_back(s);
      e.probe_weights.push_back(w[s]);
    }
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

std::string attention_report_to_text(const AttentionReport& r) {
  std::ostringstream os;
  for (const auto& e : r.entries) {
    os << "example " << e.example_id << "\n";
    if (e.empty) {
      os << "  empty: " << e.reason << "\n";
      continue;
    }
    os << "  top token per step:";
    for (size_t s = 0; s < e.top_token.size(); ++s) os << " " << e.top_token[s];
    os << "\n  transitions:";
    if (e.transition_steps.empty()) {
      os << " none";
    } else {
      for (int s : e.transition_steps) os << " " << s;
    }
    os << "\n";
    for (size_t i = 0; i < e.probe_steps.size(); ++i) {
      os << "  weights@t" << e.probe_steps[i] << ":";
      for (double v : e.probe_weights[i]) os << " " << format_double(v);
      os << "\n";
    }
  }
  return os.str();
}

std::string attention_report_to_csv(const AttentionReport& r) {
  std::ostringstream os;
  os << "example_id,step,position,weight\n";
  for (const auto& e : r.entries) {
    if (e.empty) continue;
    for (size_t i = 0; i < e.probe_steps.size(); ++i) {
      for (size_t m = 0; m < e.probe_weights[i].size(); ++m) {
        os << e.example_id << "," << e.probe_steps[i] << "," << m << ","
           << format_double(e.probe_weights[i][m]) << "\n";
      }
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// whole-dataset evaluation

void EvalOptions::validate() const {
  if (n_samples < 2) throw ConfigError("eval.n_samples: must be >= 2");
  if (horizons_s.empty()) throw ConfigError("eval.horizons_s: must not be empty");
  for (double h : horizons_s) {
    if (h <= 0.0) throw ConfigError("eval.horizons_s: horizons must be positive");
  }
  if (info_gain_samples < 2) throw ConfigError("eval.info_gain_samples: must be >= 2");
}

std::string EvalOptions::to_json_text() const {
  nlohmann::ordered_json j;
  j["n_samples"] = n_samples;
  j["horizons_s"] = horizons_s;
  j["with_info_gain"] = with_info_gain;
  j["info_gain_samples"] = info_gain_samples;
  j["seed"] = seed;
  return j.dump();
}

EvalOptions EvalOptions::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval config: ") + e.what());
  }
  EvalOptions o;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "n_samples") o.n_samples = it.value().get<int>();
      else if (k == "horizons_s") o.horizons_s = it.value().get<std::vector<double>>();
      else if (k == "with_info_gain") o.with_info_gain = it.value().get<bool>();
      else if (k == "info_gain_samples") o.info_gain_samples = it.value().get<int>();
      else if (k == "seed") o.seed = it.value().get<std::uint64_t>();
      else throw ConfigError("eval." + k + ": unknown key");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("eval." + k + ": wrong value type");
    }
  }
  o.validate();
  return o;
}

namespace {

// caption log-likelihood under its own rollout logits, used to pick the
// sample whose caption we score for recall
double caption_loglik(const diff::Tape& tape, const model::CaptionRollout& cap) {
  if (cap.logits.empty()) return 0.0;
  double acc = 0.0;
  for (size_t m = 0; m < cap.logits.size(); ++m) {
    const double* lg = tape.value(cap.logits[m]);
    const int n = tape.size(cap.logits[m]);
    double mx = lg[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, lg[i]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) z += std::exp(lg[i] - mx);
    acc += lg[cap.tokens[m]] - mx - std::log(z);
  }
  return acc;
}

std::vector<annotate::Token> to_tokens(const std::vector<int>& ids) {
  std::vector<annotate::Token> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(static_cast<annotate::Token>(id));
  return out;
}

}  // namespace

EvalReport evaluate(model::Model& m, const std::vector<data::PredictionExample>& data,
                    const EvalOptions& opt) {
  opt.validate();
  EvalReport rep;
  std::vector<std::vector<annotate::Token>> gt_caps, pred_caps;
  std::map<int, HorizonMetrics> horizon_sums;
  double recall_sum = 0.0;
  int recall_n = 0;
  double entropy_sum = 0.0;
  double gain_sum = 0.0;
  int gain_n = 0;

  for (const auto& ex : data) {
    ExampleEval ev;
    ev.example_id = ex.example_id;

    diff::Tape tape;
    auto b = m.bind(tape);
    model::RolloutOptions ropt;
    ropt.n_samples = opt.n_samples;
    Rng z(seed_combine(seed_combine(opt.seed, "eval-z"), ex.example_id));
    Rng g(seed_combine(seed_combine(opt.seed, "eval-gumbel"), ex.example_id));
    auto res = m.rollout(b, ex, ropt, z, g);

    const auto& target = ex.target_agent();
    auto futures = target_futures(res, ex.target);
    std::vector<int> horizon_steps;
    const double dt = target.future.dt;
    for (double hs : opt.horizons_s)
      horizon_steps.push_back(static_cast<int>(std::lround(hs / dt)));
    ev.horizons = displacement_metrics(futures, target.future.points, horizon_steps);
    ev.entropy = kde_entropy(futures);

    // recall scores the caption of the highest-likelihood sample
    int best = 0;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (size_t s = 0; s < res.samples.size(); ++s) {
      double ll = caption_loglik(tape, res.samples[s].agents[ex.target].caption);
      if (ll > best_ll) {
        best_ll = ll;
        best = static_cast<int>(s);
      }
    }
    auto predicted = to_tokens(res.samples[best].agents[ex.target].caption.tokens);
    pred_caps.push_back(predicted);
    if (ex.caption) {
      gt_caps.push_back(ex.caption->tokens);
      ev.recall = token_recall(predicted, ex.caption->tokens);
    }

    if (opt.with_info_gain) {
      auto ig = information_gain(m, ex, opt.info_gain_samples,
                                 seed_combine(seed_combine(opt.seed, "eval-ig"), ex.example_id));
      ev.info_gain = ig.gain;
      gain_sum += ig.gain;
      ++gain_n;
    }

    for (const auto& [h, hm] : ev.horizons) {
      horizon_sums[h].min_ade += hm.min_ade;
      horizon_sums[h].min_fde += hm.min_fde;
    }
    entropy_sum += ev.entropy;
    if (ev.recall) {
      recall_sum += *ev.recall;
      ++recall_n;
    }
    rep.examples.push_back(std::move(ev));
  }

  const int n = static_cast<int>(rep.examples.size());
  if (n > 0) {
    for (auto& [h, hm] : horizon_sums) {
      rep.mean_horizons[h] = {hm.min_ade / n, hm.min_fde / n};
    }
    rep.mean_entropy = entropy_sum / n;
  }
  if (recall_n > 0) rep.mean_recall = recall_sum / recall_n;
  if (gain_n > 0) rep.mean_info_gain = gain_sum / gain_n;
  rep.histogram = token_distribution(gt_caps, pred_caps);
  return rep;
}

std::string report_to_text(const EvalReport& r) {
  std::ostringstream os;
  for (const auto& ev : r.examples) {
    os << "example " << ev.example_id;
    for (const auto& [h, hm] : ev.horizons) {
      os << " minADE@" << h << "=" << format_double(hm.min_ade) << " minFDE@" << h << "="
         << format_double(hm.min_fde);
    }
    os << " entropy=" << format_double(ev.entropy);
    os << " recall=" << (ev.recall ? format_double(*ev.recall) : std::string("skipped"));
    if (ev.info_gain) os << " info_gain=" << format_double(*ev.info_gain);
    os << "\n";
  }
  os << "aggregate over " << r.examples.size() << " examples\n";
  for (const auto& [h, hm] : r.mean_horizons) {
    os << "  minADE@" << h << " " << format_double(hm.min_ade) << "\n";
    os << "  minFDE@" << h << " " << format_double(hm.min_fde) << "\n";
  }
  os << "  entropy " << format_double(r.mean_entropy) << "\n";
  os << "  recall "
     << (r.mean_recall ? format_double(*r.mean_recall) : std::string("skipped")) << "\n";
  if (r.mean_info_gain) os << "  info_gain " << format_double(*r.mean_info_gain) << "\n";
  return os.str();
}

std::string report_to_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "example_id";
  if (!r.examples.empty()) {
    for (const auto& [h, hm] : r.examples[0].horizons) {
      (void)hm;
      os << ",min_ade_" << h << ",min_fde_" << h;
    }
  }
  os << ",entropy,recall,info_gain\n";
  for (const auto& ev : r.examples) {
    os << ev.example_id;
    for (const auto& [h, hm] : ev.horizons) {
      os << "," << format_double(hm.min_ade) << "," << format_double(hm.min_fde);
    }
    os << "," << format_double(ev.entropy);
    os << "," << (ev.recall ? format_double(*ev.recall) : std::string(""));
    os << "," << (ev.info_gain ? format_double(*ev.info_gain) : std::string(""));
    os << "\n";
  }
  return os.str();
}

std::optional<double> teacher_forced_recall(model::Model& m, const data::PredictionExample& ex,
                                            std::uint64_t seed) {
  if (!ex.caption) return std::nullopt;
  diff::Tape tape;
  auto b = m.bind(tape);
  auto enc = m.encode_agents(b, ex);
  std::vector<double> zv(m.config().noise_dim);
  Rng z(seed_combine(seed, "tf-z"));
  for (double& v : zv) v = z.gaussian();
  diff::NodeId zn = tape.leaf(zv);
  std::vector<int> teacher;
  for (annotate::Token t : ex.caption->tokens) teacher.push_back(static_cast<int>(t));
  Rng g(seed_combine(seed, "tf-gumbel"));  // unused in teacher mode
  auto cap = m.generate_caption(b, enc.h0[ex.target], zn, &teacher, g, true);
  // argmax decode of the teacher-forced logits
  std::vector<annotate::Token> argmax;
  for (size_t i = 0; i < cap.logits.size(); ++i) {
    const double* lg = tape.value(cap.logits[i]);
    int best = 0;
    for (int k = 1; k < tape.size(cap.logits[i]); ++k) {
      if (lg[k] > lg[best]) best = k;
    }
    argmax.push_back(static_cast<annotate::Token>(best));
  }
  return token_recall(argmax, ex.caption->tokens);
}

}  // namespace langtraj::eval
