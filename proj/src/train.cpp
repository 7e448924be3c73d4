#include "langtraj/train.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace langtraj::train {

using diff::NodeId;

void TrainConfig::validate() const {
  if (lr <= 0) throw ConfigError("train.lr: must be positive");
  if (batch <= 0) throw ConfigError("train.batch: must be positive");
  if (epochs <= 0) throw ConfigError("train.epochs: must be positive");
  if (lambda1 < 0 || lambda2 < 0) throw ConfigError("train.lambda: must be >= 0");
  if (rebalance_ratio < 0 || rebalance_ratio > 1)
    throw ConfigError("train.rebalance_ratio: must be in [0, 1]");
  if (clip_norm <= 0) throw ConfigError("train.clip_norm: must be positive");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every: must be >= 0");
}

std::string TrainConfig::to_json_text() const {
  nlohmann::ordered_json j;
  j["lr"] = lr;
  j["batch"] = batch;
  j["epochs"] = epochs;
  j["lambda1"] = lambda1;
  j["lambda2"] = lambda2;
  j["rebalance_ratio"] = rebalance_ratio;
  j["clip_norm"] = clip_norm;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["lang_exclude_pad"] = lang_exclude_pad;
  return j.dump();
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "lr") c.lr = it.value().get<double>();
      else if (k == "batch") c.batch = it.value().get<int>();
      else if (k == "epochs") c.epochs = it.value().get<int>();
      else if (k == "lambda1") c.lambda1 = it.value().get<double>();
      else if (k == "lambda2") c.lambda2 = it.value().get<double>();
      else if (k == "rebalance_ratio") c.rebalance_ratio = it.value().get<double>();
      else if (k == "clip_norm") c.clip_norm = it.value().get<double>();
      else if (k == "seed") c.seed = it.value().get<std::uint64_t>();
      else if (k == "checkpoint_every") c.checkpoint_every = it.value().get<int>();
      else if (k == "lang_exclude_pad") c.lang_exclude_pad = it.value().get<bool>();
      else throw ConfigError("train." + k + ": unknown key");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("train." + k + ": wrong value type");
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// losses

MonLoss loss_mon(diff::Tape& tape, const std::vector<std::vector<NodeId>>& sample_disp,
                 const geom::Trajectory& gt_future, geom::Vec2 start) {
  if (sample_disp.empty()) throw InvalidInput("loss_mon: needs at least one sample");
  int T = static_cast<int>(gt_future.points.size());
  MonLoss out;
  std::vector<NodeId> ade_nodes;
  for (const auto& disps : sample_disp) {
    if (static_cast<int>(disps.size()) != T)
      throw InvalidInput("loss_mon: sample length differs from ground truth");
    double sx[2] = {start.x, start.y};
    NodeId pos = tape.leaf(sx, 2, 1, false);
    std::vector<NodeId> dists;
    for (int t = 0; t < T; ++t) {
      pos = tape.add(pos, disps[t]);
      double g[2] = {gt_future.points[t].x, gt_future.points[t].y};
      dists.push_back(tape.l2_norm(tape.sub(pos, tape.leaf(g, 2, 1, false))));
    }
    NodeId ade = tape.mean_all(tape.concat(dists));
    ade_nodes.push_back(ade);
    out.ades.push_back(tape.scalar_value(ade));
  }
  out.best = static_cast<int>(
      std::min_element(out.ades.begin(), out.ades.end()) - out.ades.begin());
  out.node = ade_nodes[out.best];
  return out;
}

NodeId loss_lang(diff::Tape& tape, const std::vector<NodeId>& logits,
                 const std::vector<int>& gt_tokens, bool exclude_pad) {
  if (logits.size() != gt_tokens.size())
    throw InvalidInput("loss_lang: logits/tokens length mismatch");
  if (logits.empty()) throw InvalidInput("loss_lang: empty caption");
  const int pad = static_cast<int>(annotate::Token::Pad);
  std::vector<NodeId> ces;
  for (size_t m = 0; m < logits.size(); ++m) {
    if (exclude_pad && gt_tokens[m] == pad) continue;
    ces.push_back(tape.cross_entropy(logits[m], gt_tokens[m]));
  }
  if (ces.empty()) return tape.scalar(0.0);
  return tape.mean_all(tape.concat(ces));
}

// ---------------------------------------------------------------------------
// batching

namespace {

void shuffle_idx(std::vector<int>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
    std::swap(v[i], v[rng.uniform_int(i + 1)]);
}

}  // namespace

std::vector<std::vector<int>> rebalance(const std::vector<char>& captioned, int batch,
                                        double ratio, Rng& rng) {
  int n = static_cast<int>(captioned.size());
  if (n == 0) throw InvalidInput("rebalance: empty dataset");
  if (batch <= 0) throw InvalidInput("rebalance: batch must be positive");
  if (ratio < 0 || ratio > 1) throw ConfigError("train.rebalance_ratio: must be in [0, 1]");

  if (ratio == 0.0) {
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    shuffle_idx(all, rng);
    std::vector<std::vector<int>> batches;
    for (int i = 0; i < n; i += batch)
      batches.emplace_back(all.begin() + i, all.begin() + std::min(n, i + batch));
    return batches;
  }

  std::vector<int> cap, rest;
  for (int i = 0; i < n; ++i) (captioned[i] ? cap : rest).push_back(i);
  if (cap.empty())
    throw ConfigError("train.rebalance_ratio: positive ratio but no captioned examples");
  shuffle_idx(cap, rng);
  shuffle_idx(rest, rng);

  int quota = static_cast<int>(std::lround(ratio * batch));
  quota = std::clamp(quota, 0, batch);
  int n_batches = (n + batch - 1) / batch;
  size_t ci = 0, ri = 0;
  auto draw = [&](std::vector<int>& pool, size_t& cursor) {
    if (cursor < pool.size()) return pool[cursor++];
    return pool[rng.uniform_int(static_cast<int>(pool.size()))];  // with replacement
  };
  std::vector<std::vector<int>> batches(n_batches);
  for (auto& bat : batches) {
    for (int k = 0; k < quota; ++k) bat.push_back(draw(cap, ci));
    for (int k = quota; k < batch; ++k)
      bat.push_back(rest.empty() ? draw(cap, ci) : draw(rest, ri));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// trainer

Trainer::Trainer(model::Model& m, const TrainConfig& cfg)
    : model_(m),
      cfg_(cfg),
      order_rng_(seed_combine(cfg.seed, "order")),
      z_rng_(seed_combine(cfg.seed, "z")),
      gumbel_rng_(seed_combine(cfg.seed, "gumbel")),
      dropout_rng_(seed_combine(cfg.seed, "dropout")),
      disc_z_rng_(seed_combine(cfg.seed, "disc-z")),
      disc_gumbel_rng_(seed_combine(cfg.seed, "disc-gumbel")) {
  cfg_.validate();
  adam_.lr = cfg_.lr;
}

namespace {

std::vector<geom::Vec2> future_displacements(const data::AgentTrack& agent) {
  std::vector<geom::Vec2> out;
  geom::Vec2 prev = agent.past.points.back();
  for (const geom::Vec2& p : agent.future.points) {
    out.push_back(p - prev);
    prev = p;
  }
  return out;
}

std::vector<geom::Vec2> sample_displacements(const std::vector<geom::Vec2>& future,
                                             geom::Vec2 start) {
  std::vector<geom::Vec2> out;
  geom::Vec2 prev = start;
  for (const geom::Vec2& p : future) {
    out.push_back(p - prev);
    prev = p;
  }
  return out;
}

}  // namespace

LossBreakdown Trainer::step(const std::vector<data::PredictionExample>& data,
                            const std::vector<int>& batch) {
  if (batch.empty()) throw InvalidInput("train step: empty batch");
  const int B = static_cast<int>(batch.size());
  LossBreakdown out;
  out.lambda1 = cfg_.lambda1;
  out.lambda2 = cfg_.lambda2;

  // --- discriminator update: real futures vs one frozen-generator sample
  model_.disc_params().zero_grad();
  {
    diff::Tape tape;
    auto frozen = model_.bind(tape, false, false, nullptr);
    auto db = model_.bind_disc(tape, true);
    std::vector<NodeId> terms;
    for (int idx : batch) {
      const auto& ex = data[idx];
      model::RolloutOptions opt;
      opt.n_samples = 1;
      auto res = model_.rollout(frozen, ex, opt, disc_z_rng_, disc_gumbel_rng_);
      for (int a = 0; a < res.enc.n_agents; ++a) {
        const auto& agent = ex.agents[a];
        bool future_ok = std::all_of(agent.future_mask.begin(), agent.future_mask.end(),
                                     [](uint8_t m) { return m != 0; });
        if (!future_ok) continue;
        const double* hv = tape.value(res.enc.h0[a]);
        std::vector<double> h0(hv, hv + model_.config().encoder_hidden);
        NodeId real_logit = model_.discriminate(db, h0, future_displacements(agent));
        terms.push_back(tape.bce_with_logit(real_logit, 1.0));
        auto fake = sample_displacements(res.samples[0].agents[a].future,
                                         agent.past.points.back());
        terms.push_back(tape.bce_with_logit(model_.discriminate(db, h0, fake), 0.0));
      }
    }
    if (!terms.empty()) {
      NodeId total = tape.mean_all(tape.concat(terms));
      out.discriminator = tape.scalar_value(total);
      if (!std::isfinite(out.discriminator))
        throw DivergenceError("step " + std::to_string(gen_t_ + 1) +
                              ": non-finite discriminator loss");
      tape.backward(total);
      clip_grad_norm(model_.disc_params(), cfg_.clip_norm);
      adam_step(model_.disc_params(), adam_, ++disc_t_);
    }
  }

  // --- generator update: MoN + language CE, one tape per example
  model_.gen_params().zero_grad();
  double mon_sum = 0.0, lang_sum = 0.0;
  for (int idx : batch) {
    const auto& ex = data[idx];
    diff::Tape tape;
    auto bind = model_.bind(tape, true, true, &dropout_rng_);
    model::RolloutOptions opt;
    opt.n_samples = model_.config().num_samples;
    opt.training = true;
    auto res = model_.rollout(bind, ex, opt, z_rng_, gumbel_rng_);

    std::vector<std::vector<NodeId>> sample_disp;
    for (const auto& s : res.samples) sample_disp.push_back(s.agents[ex.target].disp_nodes);
    const auto& target = ex.target_agent();
    MonLoss mon = loss_mon(tape, sample_disp, target.future, target.past.points.back());

    NodeId total = tape.scale(mon.node, cfg_.lambda1);
    double lang_v = 0.0;
    if (ex.caption) {
      std::vector<int> gt;
      for (auto tk : ex.caption->tokens) gt.push_back(static_cast<int>(tk));
      std::vector<double> z(model_.config().noise_dim);
      for (double& v : z) v = z_rng_.gaussian();
      auto teach = model_.generate_caption(bind, res.enc.h0[ex.target], tape.leaf(z, false),
                                           &gt, gumbel_rng_, true);
      NodeId lang = loss_lang(tape, teach.logits, gt, cfg_.lang_exclude_pad);
      lang_v = tape.scalar_value(lang);
      total = tape.add(total, tape.scale(lang, cfg_.lambda2));
    }
    double mon_v = tape.scalar_value(mon.node);
    if (!std::isfinite(mon_v) || !std::isfinite(lang_v))
      throw DivergenceError("step " + std::to_string(gen_t_ + 1) + " example " +
                            ex.example_id + ": non-finite generator loss");
    mon_sum += mon_v;
    lang_sum += lang_v;
    tape.backward(tape.scale(total, 1.0 / B));
  }
  clip_grad_norm(model_.gen_params(), cfg_.clip_norm);
  adam_step(model_.gen_params(), adam_, ++gen_t_);

  out.mon = mon_sum / B;
  out.lang = lang_sum / B;
  out.generator_total = cfg_.lambda1 * out.mon + cfg_.lambda2 * out.lang;
  return out;
}

void Trainer::run(const std::vector<data::PredictionExample>& data,
                  const std::function<void(int, const LossBreakdown&)>& on_step) {
  if (data.empty()) throw InvalidInput("training needs a non-empty dataset");
  std::vector<char> captioned;
  for (const auto& ex : data) captioned.push_back(ex.caption.has_value() ? 1 : 0);
  int step_idx = gen_t_;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    auto batches = rebalance(captioned, cfg_.batch, cfg_.rebalance_ratio, order_rng_);
    for (const auto& batch : batches) {
      LossBreakdown losses = step(data, batch);
      on_step(++step_idx, losses);
    }
  }
}

}  // namespace langtraj::train
