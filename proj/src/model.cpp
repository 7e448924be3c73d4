#include "langtraj/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "json.hpp"

namespace langtraj::model {

using annotate::Token;
using diff::NodeId;
using diff::kNoNode;

std::string decoder_kind_name(DecoderKind k) {
  switch (k) {
    case DecoderKind::Ours: return "ours";
    case DecoderKind::Vanilla: return "vanilla";
    case DecoderKind::Multihead: return "multihead";
  }
  throw InvalidInput("bad decoder kind");
}

DecoderKind decoder_kind_from_name(const std::string& s) {
  if (s == "ours") return DecoderKind::Ours;
  if (s == "vanilla") return DecoderKind::Vanilla;
  if (s == "multihead") return DecoderKind::Multihead;
  throw ConfigError("model.decoder: unknown kind '" + s + "'");
}

void ModelConfig::validate() const {
  auto pos = [](int v, const char* key) {
    if (v <= 0) throw ConfigError(std::string("model.") + key + ": must be positive");
  };
  pos(encoder_hidden, "encoder_hidden");
  pos(token_embed, "token_embed");
  pos(token_gen_hidden, "token_gen_hidden");
  pos(attn_mlp_hidden, "attn_mlp_hidden");
  pos(noise_dim, "noise_dim");
  pos(map_embed, "map_embed");
  pos(decoder_hidden, "decoder_hidden");
  pos(max_agents, "max_agents");
  pos(max_tokens, "max_tokens");
  pos(num_samples, "num_samples");
  pos(past_steps, "past_steps");
  pos(future_steps, "future_steps");
  pos(map_max_segments, "map_max_segments");
  pos(mh_heads, "mh_heads");
  pos(mh_dim, "mh_dim");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model.dropout: must be in [0, 1)");
  if (gumbel_tau <= 0.0) throw ConfigError("model.gumbel_tau: must be positive");
  if (decoder_hidden != encoder_hidden)
    throw ConfigError("model.decoder_hidden: must equal encoder_hidden (h0 seeds the decoder)");
  if (no_attention && token_gen_hidden != token_embed)
    throw ConfigError(
        "model.no_attention: requires token_gen_hidden == token_embed "
        "(the raw token-encoder state replaces the attended context)");
  if (max_tokens < 3)
    throw ConfigError("model.max_tokens: needs room for <bos>, one token and <eos>");
}

std::string ModelConfig::to_json_text() const {
  nlohmann::ordered_json j;
  j["encoder_hidden"] = encoder_hidden;
  j["token_embed"] = token_embed;
  j["token_gen_hidden"] = token_gen_hidden;
  j["attn_mlp_hidden"] = attn_mlp_hidden;
  j["noise_dim"] = noise_dim;
  j["map_embed"] = map_embed;
  j["decoder_hidden"] = decoder_hidden;
  j["max_agents"] = max_agents;
  j["max_tokens"] = max_tokens;
  j["num_samples"] = num_samples;
  j["past_steps"] = past_steps;
  j["future_steps"] = future_steps;
  j["map_max_segments"] = map_max_segments;
  j["mh_heads"] = mh_heads;
  j["mh_dim"] = mh_dim;
  j["dropout"] = dropout;
  j["gumbel_tau"] = gumbel_tau;
  j["decoder"] = decoder_kind_name(decoder);
  j["no_attention"] = no_attention;
  j["no_agent_attention"] = no_agent_attention;
  return j.dump();
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  ModelConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    try {
      if (k == "encoder_hidden") c.encoder_hidden = it.value().get<int>();
      else if (k == "token_embed") c.token_embed = it.value().get<int>();
      else if (k == "token_gen_hidden") c.token_gen_hidden = it.value().get<int>();
      else if (k == "attn_mlp_hidden") c.attn_mlp_hidden = it.value().get<int>();
      else if (k == "noise_dim") c.noise_dim = it.value().get<int>();
      else if (k == "map_embed") c.map_embed = it.value().get<int>();
      else if (k == "decoder_hidden") c.decoder_hidden = it.value().get<int>();
      else if (k == "max_agents") c.max_agents = it.value().get<int>();
      else if (k == "max_tokens") c.max_tokens = it.value().get<int>();
      else if (k == "num_samples") c.num_samples = it.value().get<int>();
      else if (k == "past_steps") c.past_steps = it.value().get<int>();
      else if (k == "future_steps") c.future_steps = it.value().get<int>();
      else if (k == "map_max_segments") c.map_max_segments = it.value().get<int>();
      else if (k == "mh_heads") c.mh_heads = it.value().get<int>();
      else if (k == "mh_dim") c.mh_dim = it.value().get<int>();
      else if (k == "dropout") c.dropout = it.value().get<double>();
      else if (k == "gumbel_tau") c.gumbel_tau = it.value().get<double>();
      else if (k == "decoder") c.decoder = decoder_kind_from_name(it.value().get<std::string>());
      else if (k == "no_attention") c.no_attention = it.value().get<bool>();
      else if (k == "no_agent_attention") c.no_agent_attention = it.value().get<bool>();
      else throw ConfigError("model." + k + ": unknown key");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("model." + k + ": wrong value type");
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// construction

void Model::add_lstm(const std::string& prefix, ParamStore& store, int input, int hidden) {
  store.add(prefix + ".wih", 4 * hidden, input);
  store.add(prefix + ".whh", 4 * hidden, hidden);
  store.add(prefix + ".b", 4 * hidden, 1);
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const int H = cfg_.encoder_hidden, E = cfg_.token_embed, G = cfg_.token_gen_hidden;
  const int P = cfg_.attn_mlp_hidden, Z = cfg_.noise_dim, Mp = cfg_.map_embed;
  const int D = cfg_.decoder_hidden, A = cfg_.max_agents;

  gen_.add("emb.tok", E, annotate::kVocabSize);

  gen_.add("enc.map.proj.w", Mp, 6);
  gen_.add("enc.map.proj.b", Mp, 1);
  gen_.add("enc.map.score.w", Mp, Mp);
  gen_.add("enc.map.out.w", Mp, 2 * Mp);
  gen_.add("enc.map.out.b", Mp, 1);
  gen_.add("enc.map.null", Mp, 1);

  add_lstm("enc.agent.lstm", gen_, 2 + Mp, H);
  gen_.add("enc.gnn.msg.w", H, H + 2);
  gen_.add("enc.gnn.msg.b", H, 1);
  gen_.add("enc.gnn.self.w", H, H);
  gen_.add("enc.gnn.agg.w", H, H);
  gen_.add("enc.gnn.b", H, 1);

  add_lstm("gen.lstm", gen_, E + H + Z, G);
  gen_.add("gen.out.w", annotate::kVocabSize, G);
  gen_.add("gen.out.b", annotate::kVocabSize, 1);

  gen_.add("attn.agent.mlp1.w", P, E);
  gen_.add("attn.agent.mlp1.b", P, 1);
  gen_.add("attn.agent.mlp2.w", A, P);
  gen_.add("attn.agent.mlp2.b", A, 1);
  gen_.add("attn.agent.proj.w", E, D);
  gen_.add("attn.agent.proj.b", E, 1);

  add_lstm("tok.reenc", gen_, E, G);
  gen_.add("tok.query.w", G, G + D);
  gen_.add("tok.query.b", G, 1);
  gen_.add("tok.score.w", G, G);

  switch (cfg_.decoder) {
    case DecoderKind::Ours:
      add_lstm("dec.lstm", gen_, 2 + Z + E, D);
      break;
    case DecoderKind::Vanilla:
      add_lstm("dec.lstm", gen_, 2 + Z, D);
      break;
    case DecoderKind::Multihead:
      for (int h = 0; h < cfg_.mh_heads; ++h) {
        std::string head = "mh" + std::to_string(h);
        gen_.add(head + ".q.w", cfg_.mh_dim, D);
        gen_.add(head + ".k.w", cfg_.mh_dim, D);
        gen_.add(head + ".v.w", cfg_.mh_dim, D);
      }
      add_lstm("dec.lstm", gen_, 2 + Z + cfg_.mh_heads * cfg_.mh_dim, D);
      break;
  }
  gen_.add("dec.out.w", 2, D);
  gen_.add("dec.out.b", 2, 1);

  add_lstm("disc.lstm", disc_, 2, H);
  disc_.add("disc.out.w", 1, H);
  disc_.add("disc.out.b", 1, 1);
}

void Model::init_lstm(const std::string& prefix, ParamStore& store, Rng& rng) {
  Param& wih = store.get(prefix + ".wih");
  Param& whh = store.get(prefix + ".whh");
  init_uniform(wih, rng, 1.0 / std::sqrt(static_cast<double>(wih.cols)));
  init_uniform(whh, rng, 1.0 / std::sqrt(static_cast<double>(whh.cols)));
  // forget-gate bias starts at 1 so early cells retain state
  Param& b = store.get(prefix + ".b");
  int hidden = whh.cols;
  for (int j = 0; j < hidden; ++j) b.value[hidden + j] = 1.0;
}

void Model::init_params(Rng& rng) {
  for (Param& p : gen_.params()) {
    if (p.name.size() > 2 && p.name.compare(p.name.size() - 2, 2, ".b") == 0) continue;
    if (p.name.size() > 4 && p.name.compare(p.name.size() - 4, 4, ".whh") == 0) continue;
    if (p.name.size() > 4 && p.name.compare(p.name.size() - 4, 4, ".wih") == 0) continue;
    init_uniform(p, rng, 1.0 / std::sqrt(static_cast<double>(p.cols)));
  }
  init_lstm("enc.agent.lstm", gen_, rng);
  init_lstm("gen.lstm", gen_, rng);
  init_lstm("tok.reenc", gen_, rng);
  init_lstm("dec.lstm", gen_, rng);
  init_lstm("disc.lstm", disc_, rng);
  for (Param& p : disc_.params()) {
    if (p.name == "disc.out.w") init_uniform(p, rng, 1.0 / std::sqrt(static_cast<double>(p.cols)));
  }
}

// ---------------------------------------------------------------------------
// binding helpers

Model::Bind Model::bind(diff::Tape& tape, bool trainable, bool training, Rng* dropout_rng) {
  if (training && cfg_.dropout > 0.0 && dropout_rng == nullptr)
    throw InvalidInput("training bind with dropout needs an rng");
  return Bind{tape, &gen_, trainable, training, dropout_rng, {}};
}

Model::Bind Model::bind_disc(diff::Tape& tape, bool trainable) {
  return Bind{tape, &disc_, trainable, false, nullptr, {}};
}

NodeId Model::p(Bind& b, const std::string& name) {
  auto it = b.cache.find(name);
  if (it != b.cache.end()) return it->second;
  Param& pr = b.store->get(name);
  NodeId id = b.trainable
                  ? b.tape.param(pr.value.data(), pr.rows, pr.cols, pr.grad.data())
                  : b.tape.leaf(pr.value.data(), pr.rows, pr.cols, false);
  b.cache[name] = id;
  return id;
}

NodeId Model::zero(Bind& b, int n) {
  std::string key = "_zero" + std::to_string(n);
  auto it = b.cache.find(key);
  if (it != b.cache.end()) return it->second;
  std::vector<double> z(n, 0.0);
  NodeId id = b.tape.leaf(z, false);
  b.cache[key] = id;
  return id;
}

NodeId Model::ident(Bind& b, int n) {
  std::string key = "_ident" + std::to_string(n);
  auto it = b.cache.find(key);
  if (it != b.cache.end()) return it->second;
  std::vector<double> eye(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) eye[static_cast<std::size_t>(i) * n + i] = 1.0;
  NodeId id = b.tape.leaf(eye.data(), n, n, false);
  b.cache[key] = id;
  return id;
}

NodeId Model::maybe_dropout(Bind& b, NodeId x) {
  if (!b.training || cfg_.dropout <= 0.0) return x;
  double keep = 1.0 - cfg_.dropout;
  std::vector<double> mask(b.tape.size(x));
  for (double& m : mask) m = b.dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
  return b.tape.mul(x, b.tape.leaf(mask, false));
}

NodeId Model::embed_token(Bind& b, int token_id) {
  if (token_id < 0 || token_id >= annotate::kVocabSize)
    throw InvalidInput("token id out of vocabulary: " + std::to_string(token_id));
  std::string key = "_emb" + std::to_string(token_id);
  auto it = b.cache.find(key);
  if (it != b.cache.end()) return it->second;
  std::vector<double> onehot(annotate::kVocabSize, 0.0);
  onehot[token_id] = 1.0;
  NodeId id = b.tape.linear(p(b, "emb.tok"), b.tape.leaf(onehot, false));
  b.cache[key] = id;
  return id;
}

NodeId Model::embed_soft(Bind& b, NodeId onehot) {
  return b.tape.linear(p(b, "emb.tok"), onehot);
}

// ---------------------------------------------------------------------------
// encoders

NodeId Model::encode_map(Bind& b, const geom::MapGraph& map, geom::Vec2 anchor) {
  diff::Tape& t = b.tape;
  // collect anchored segment features: start, end, unit direction
  struct Seg {
    double d2;
    std::array<double, 6> f;
  };
  std::vector<Seg> segs;
  for (const auto& lane : map.centerlines) {
    for (size_t i = 0; i + 1 < lane.polyline.size(); ++i) {
      geom::Vec2 a = lane.polyline[i] - anchor;
      geom::Vec2 c = lane.polyline[i + 1] - anchor;
      geom::Vec2 dir = c - a;
      double len = dir.norm();
      if (len <= 0) continue;
      geom::Vec2 mid = (a + c) * 0.5;
      segs.push_back({mid.dot(mid), {a.x, a.y, c.x, c.y, dir.x / len, dir.y / len}});
    }
  }
  if (segs.empty()) return p(b, "enc.map.null");

  // nearest segments first; the full feature tuple breaks distance ties so
  // the selection is independent of centerline order
  std::sort(segs.begin(), segs.end(), [](const Seg& x, const Seg& y) {
    if (x.d2 != y.d2) return x.d2 < y.d2;
    return x.f < y.f;
  });
  if (static_cast<int>(segs.size()) > cfg_.map_max_segments) segs.resize(cfg_.map_max_segments);

  NodeId proj_w = p(b, "enc.map.proj.w");
  NodeId proj_b = p(b, "enc.map.proj.b");
  std::vector<NodeId> embs;
  for (const Seg& s : segs) {
    NodeId f = t.leaf(s.f.data(), 6, 1, false);
    embs.push_back(t.tanh(t.linear(proj_w, f, proj_b)));
  }
  NodeId rows = t.stack_rows(embs);
  NodeId score_w = p(b, "enc.map.score.w");
  NodeId out_w = p(b, "enc.map.out.w");
  NodeId out_b = p(b, "enc.map.out.b");
  std::vector<NodeId> refined;
  for (NodeId e : embs) {
    NodeId alpha = t.softmax(t.attention_scores(e, score_w, rows));
    NodeId ctx = t.weighted_sum_rows(alpha, rows);
    refined.push_back(t.tanh(t.linear(out_w, t.concat({e, ctx}), out_b)));
  }
  return t.mean_rows(t.stack_rows(refined));
}

EncoderOutput Model::encode_agents(Bind& b, const data::PredictionExample& ex) {
  diff::Tape& t = b.tape;
  const int H = cfg_.encoder_hidden;
  int n = static_cast<int>(ex.agents.size());
  if (n == 0) throw InvalidInput("example has no agents: " + ex.example_id);
  if (n > cfg_.max_agents) throw InvalidInput("example exceeds max agents: " + ex.example_id);

  NodeId wih = p(b, "enc.agent.lstm.wih");
  NodeId whh = p(b, "enc.agent.lstm.whh");
  NodeId lb = p(b, "enc.agent.lstm.b");

  EncoderOutput out;
  out.n_agents = n;
  std::vector<NodeId> raw_h(n);
  for (int a = 0; a < n; ++a) {
    const auto& past = ex.agents[a].past;
    if (static_cast<int>(past.points.size()) != cfg_.past_steps)
      throw InvalidInput("past length mismatch in " + ex.example_id);
    geom::Vec2 origin = past.points.back();
    NodeId memb = encode_map(b, ex.map, origin);
    out.map_emb.push_back(memb);
    NodeId h = zero(b, H);
    NodeId c = zero(b, H);
    for (int s = 0; s < cfg_.past_steps; ++s) {
      geom::Vec2 rel = past.points[s] - origin;
      double xy[2] = {rel.x, rel.y};
      NodeId x = t.concat({t.leaf(xy, 2, 1, false), memb});
      NodeId hc = t.lstm_cell(x, h, c, wih, whh, lb);
      h = t.slice(hc, 0, H);
      c = t.slice(hc, H, H);
    }
    raw_h[a] = h;
  }

  // one social round: messages from every other agent with the relative
  // offset at t=0 as an edge feature, mean-aggregated
  NodeId msg_w = p(b, "enc.gnn.msg.w");
  NodeId msg_b = p(b, "enc.gnn.msg.b");
  NodeId self_w = p(b, "enc.gnn.self.w");
  NodeId agg_w = p(b, "enc.gnn.agg.w");
  NodeId node_b = p(b, "enc.gnn.b");
  for (int i = 0; i < n; ++i) {
    geom::Vec2 pi = ex.agents[i].past.points.back();
    std::vector<NodeId> msgs;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      geom::Vec2 dp = ex.agents[j].past.points.back() - pi;
      double off[2] = {dp.x, dp.y};
      msgs.push_back(
          t.tanh(t.linear(msg_w, t.concat({raw_h[j], t.leaf(off, 2, 1, false)}), msg_b)));
    }
    NodeId agg = msgs.empty() ? zero(b, H) : t.mean_rows(t.stack_rows(msgs));
    NodeId h = t.tanh(t.add(t.add(t.linear(self_w, raw_h[i]), t.linear(agg_w, agg)), node_b));
    out.h0.push_back(maybe_dropout(b, h));
  }
  for (int a = n; a < cfg_.max_agents; ++a) out.h0.push_back(zero(b, H));
  out.agent_mask.assign(cfg_.max_agents, 0.0);
  for (int a = 0; a < n; ++a) out.agent_mask[a] = 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// token generator

CaptionRollout Model::generate_caption(Bind& b, NodeId h0, NodeId z,
                                       const std::vector<int>* teacher_tokens,
                                       Rng& gumbel_rng, bool hard) {
  diff::Tape& t = b.tape;
  const int M = cfg_.max_tokens, G = cfg_.token_gen_hidden;
  const int pad = static_cast<int>(Token::Pad);
  const int eos = static_cast<int>(Token::Eos);
  if (teacher_tokens && static_cast<int>(teacher_tokens->size()) != M)
    throw InvalidInput("teacher tokens must have length " + std::to_string(M));

  NodeId wih = p(b, "gen.lstm.wih");
  NodeId whh = p(b, "gen.lstm.whh");
  NodeId lb = p(b, "gen.lstm.b");
  NodeId ow = p(b, "gen.out.w");
  NodeId ob = p(b, "gen.out.b");

  CaptionRollout out;
  NodeId h = zero(b, G);
  NodeId c = zero(b, G);
  NodeId prev = embed_token(b, static_cast<int>(Token::Bos));
  bool eos_seen = false;
  for (int m = 0; m < M; ++m) {
    NodeId x = t.concat({prev, h0, z});
    NodeId hc = t.lstm_cell(x, h, c, wih, whh, lb);
    h = t.slice(hc, 0, G);
    c = t.slice(hc, G, G);
    NodeId logits = t.linear(ow, h, ob);
    out.logits.push_back(logits);

    NodeId emb;
    int tok;
    if (teacher_tokens) {
      tok = (*teacher_tokens)[m];
      emb = embed_token(b, tok);
    } else if (eos_seen) {
      tok = pad;
      emb = embed_token(b, pad);
    } else {
      auto s = diff::gumbel_softmax(t, logits, cfg_.gumbel_tau, gumbel_rng, hard);
      tok = s.index;
      emb = embed_soft(b, s.node);
      if (tok == eos) eos_seen = true;
    }
    out.tokens.push_back(tok);
    out.embeds.push_back(emb);
    prev = emb;
  }
  return out;
}

CaptionRollout Model::embed_caption(Bind& b, const std::vector<Token>& tokens) {
  if (static_cast<int>(tokens.size()) != cfg_.max_tokens)
    throw InvalidInput("forced caption must have length " + std::to_string(cfg_.max_tokens));
  CaptionRollout out;
  for (Token tk : tokens) {
    out.tokens.push_back(static_cast<int>(tk));
    out.embeds.push_back(embed_token(b, static_cast<int>(tk)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// attention

NodeId Model::agent_attention_weights(Bind& b, NodeId y_m, int token_id,
                                      const std::vector<double>& mask) {
  if (!annotate::is_agent_ref(static_cast<Token>(token_id))) return kNoNode;
  bool any = false;
  for (double m : mask) any = any || m != 0.0;
  if (!any) return kNoNode;  // degenerate scene, caller keeps y_m
  diff::Tape& t = b.tape;
  NodeId hidden = t.tanh(t.linear(p(b, "attn.agent.mlp1.w"), y_m, p(b, "attn.agent.mlp1.b")));
  NodeId logits = t.linear(p(b, "attn.agent.mlp2.w"), hidden, p(b, "attn.agent.mlp2.b"));
  return t.masked_softmax(logits, t.leaf(mask, false));
}

NodeId Model::agent_attend(Bind& b, NodeId y_m, int token_id,
                           const std::vector<NodeId>& agent_h,
                           const std::vector<double>& mask) {
  NodeId w = agent_attention_weights(b, y_m, token_id, mask);
  if (w == kNoNode) return y_m;
  diff::Tape& t = b.tape;
  NodeId pooled = t.weighted_sum_rows(w, t.stack_rows(agent_h));
  return t.linear(p(b, "attn.agent.proj.w"), pooled, p(b, "attn.agent.proj.b"));
}

Model::TokenAttnOut Model::token_attend(Bind& b, const std::vector<NodeId>& yprime,
                                        const std::vector<int>& tokens, NodeId h_prev) {
  diff::Tape& t = b.tape;
  const int M = cfg_.max_tokens, G = cfg_.token_gen_hidden;
  if (static_cast<int>(yprime.size()) != M || static_cast<int>(tokens.size()) != M)
    throw InvalidInput("token attention expects max_tokens rows");

  NodeId wih = p(b, "tok.reenc.wih");
  NodeId whh = p(b, "tok.reenc.whh");
  NodeId lb = p(b, "tok.reenc.b");
  NodeId h = zero(b, G);
  NodeId c = zero(b, G);
  std::vector<NodeId> enc_rows;
  for (int m = 0; m < M; ++m) {
    NodeId hc = t.lstm_cell(yprime[m], h, c, wih, whh, lb);
    h = t.slice(hc, 0, G);
    c = t.slice(hc, G, G);
    enc_rows.push_back(h);
  }

  if (cfg_.no_attention) return {h, kNoNode};

  NodeId q = t.tanh(t.linear(p(b, "tok.query.w"), t.concat({h, h_prev}), p(b, "tok.query.b")));
  NodeId scores = t.attention_scores(q, p(b, "tok.score.w"), t.stack_rows(enc_rows));
  // Attention competes over maneuver tokens only; bos/eos/pad scaffolding would
  // otherwise offer the decoder constant rows to latch onto. An empty caption
  // masks everything and masked_softmax falls back to a uniform blend.
  std::vector<double> mask(M);
  for (int m = 0; m < M; ++m) mask[m] = annotate::is_special(Token(tokens[m])) ? 0.0 : 1.0;
  NodeId alpha = t.masked_softmax(scores, t.leaf(mask, false));
  NodeId ctx = t.weighted_sum_rows(alpha, t.stack_rows(yprime));
  return {ctx, alpha};
}

// ---------------------------------------------------------------------------
// rollout

RolloutResult Model::rollout(Bind& b, const data::PredictionExample& ex,
                             const RolloutOptions& opt, Rng& z_rng, Rng& gumbel_rng) {
  diff::Tape& t = b.tape;
  const int M = cfg_.max_tokens, D = cfg_.decoder_hidden, Z = cfg_.noise_dim;
  const int T = cfg_.future_steps;
  if (opt.n_samples < 1) throw InvalidInput("rollout needs at least one sample");

  RolloutResult res;
  res.enc = encode_agents(b, ex);
  const int n = res.enc.n_agents;
  const bool ours = cfg_.decoder == DecoderKind::Ours;
  const bool hard = !opt.soft_sampling;

  NodeId dec_wih = p(b, "dec.lstm.wih");
  NodeId dec_whh = p(b, "dec.lstm.whh");
  NodeId dec_b = p(b, "dec.lstm.b");
  NodeId out_w = p(b, "dec.out.w");
  NodeId out_b = p(b, "dec.out.b");

  for (int s = 0; s < opt.n_samples; ++s) {
    SampleResult sample;
    sample.agents.resize(n);

    // shared per-agent noise for caption generator and decoder
    std::vector<NodeId> z_nodes(n);
    for (int a = 0; a < n; ++a) {
      std::vector<double> z(Z);
      for (double& v : z) v = z_rng.gaussian();
      sample.agents[a].caption.z = z;
      z_nodes[a] = t.leaf(z, false);
    }

    // captions and their embeddings
    for (int a = 0; a < n; ++a) {
      AgentSample& as = sample.agents[a];
      std::vector<double> keep_z = std::move(as.caption.z);
      if (ours) {
        if (opt.forced_all) {
          as.caption = embed_caption(b, *opt.forced_all);
        } else if (opt.forced_target && a == ex.target) {
          as.caption = embed_caption(b, *opt.forced_target);
        } else {
          as.caption = generate_caption(b, res.enc.h0[a], z_nodes[a], nullptr, gumbel_rng, hard);
        }
      }
      as.caption.z = std::move(keep_z);
    }

    // per caption position: agent-attention weights (depend on the token
    // embedding only, so computed once per sample)
    std::vector<std::vector<NodeId>> attn_w(n);
    if (ours) {
      for (int a = 0; a < n; ++a) {
        AgentSample& as = sample.agents[a];
        as.trace.agent_weights.assign(M, {});
        attn_w[a].assign(M, kNoNode);
        if (cfg_.no_agent_attention) continue;
        for (int m = 0; m < M; ++m) {
          NodeId w = agent_attention_weights(b, as.caption.embeds[m], as.caption.tokens[m],
                                             res.enc.agent_mask);
          attn_w[a][m] = w;
          if (w != kNoNode) {
            const double* wv = t.value(w);
            as.trace.agent_weights[m].assign(wv, wv + cfg_.max_agents);
          }
        }
      }
    }

    // decoder state per agent
    std::vector<NodeId> h(n), c(n), prev(n);
    std::vector<geom::Vec2> pos(n);
    for (int a = 0; a < n; ++a) {
      h[a] = res.enc.h0[a];
      c[a] = zero(b, D);
      const auto& pts = ex.agents[a].past.points;
      geom::Vec2 last_disp = pts.back() - pts[pts.size() - 2];
      double d0[2] = {last_disp.x, last_disp.y};
      prev[a] = t.leaf(d0, 2, 1, false);
      pos[a] = pts.back();
    }

    // token re-encoding is cached while Y' rows stay constant across steps
    struct TokCache {
      bool valid = false;
      std::vector<NodeId> yprime;
    };
    std::vector<TokCache> cache(n);
    std::vector<bool> has_agent_tok(n, false);
    if (ours && !cfg_.no_agent_attention) {
      for (int a = 0; a < n; ++a)
        for (int m = 0; m < M; ++m)
          if (attn_w[a][m] != kNoNode) has_agent_tok[a] = true;
    }

    for (int step = 0; step < T; ++step) {
      // all agents advance in lockstep from the same h snapshot
      std::vector<NodeId> h_snap = h;
      std::vector<NodeId> h_slots(cfg_.max_agents);
      for (int a = 0; a < cfg_.max_agents; ++a)
        h_slots[a] = a < n ? h_snap[a] : zero(b, D);

      for (int a = 0; a < n; ++a) {
        AgentSample& as = sample.agents[a];
        NodeId ctx = kNoNode;
        if (ours) {
          std::vector<NodeId>* yp;
          if (!has_agent_tok[a]) {
            if (!cache[a].valid) {
              cache[a].yprime = as.caption.embeds;
              cache[a].valid = true;
            }
            yp = &cache[a].yprime;
          } else {
            cache[a].yprime = as.caption.embeds;
            for (int m = 0; m < M; ++m) {
              if (attn_w[a][m] == kNoNode) continue;
              NodeId pooled = t.weighted_sum_rows(attn_w[a][m], t.stack_rows(h_slots));
              cache[a].yprime[m] = t.linear(p(b, "attn.agent.proj.w"), pooled,
                                            p(b, "attn.agent.proj.b"));
            }
            yp = &cache[a].yprime;
          }
          TokenAttnOut ta = token_attend(b, *yp, as.caption.tokens, h_snap[a]);
          ctx = ta.context;
          if (ta.weights != kNoNode) {
            const double* wv = t.value(ta.weights);
            as.trace.token_weights.emplace_back(wv, wv + M);
          }
        }

        NodeId x;
        if (cfg_.decoder == DecoderKind::Vanilla) {
          x = t.concat({prev[a], z_nodes[a]});
        } else if (cfg_.decoder == DecoderKind::Multihead) {
          std::vector<NodeId> parts = {prev[a], z_nodes[a]};
          std::vector<NodeId> others;
          for (int j = 0; j < n; ++j)
            if (j != a) others.push_back(h_snap[j]);
          for (int head = 0; head < cfg_.mh_heads; ++head) {
            std::string hp = "mh" + std::to_string(head);
            if (others.empty()) {
              parts.push_back(zero(b, cfg_.mh_dim));
              continue;
            }
            NodeId q = t.linear(p(b, hp + ".q.w"), h_snap[a]);
            std::vector<NodeId> keys, vals;
            for (NodeId o : others) {
              keys.push_back(t.linear(p(b, hp + ".k.w"), o));
              vals.push_back(t.linear(p(b, hp + ".v.w"), o));
            }
            NodeId scores = t.attention_scores(q, ident(b, cfg_.mh_dim), t.stack_rows(keys));
            NodeId alpha = t.softmax(scores);
            parts.push_back(t.weighted_sum_rows(alpha, t.stack_rows(vals)));
          }
          x = t.concat(parts);
        } else {
          x = t.concat({prev[a], z_nodes[a], ctx});
        }

        NodeId hc = t.lstm_cell(x, h[a], c[a], dec_wih, dec_whh, dec_b);
        h[a] = t.slice(hc, 0, D);
        c[a] = t.slice(hc, D, D);
        NodeId disp = t.linear(out_w, maybe_dropout(b, h[a]), out_b);
        const double* dv = t.value(disp);
        if (!std::isfinite(dv[0]) || !std::isfinite(dv[1]))
          throw DivergenceError("non-finite displacement decoding " + ex.example_id +
                                " sample " + std::to_string(s));
        as.disp_nodes.push_back(disp);
        pos[a] = pos[a] + geom::Vec2{dv[0], dv[1]};
        as.future.push_back(pos[a]);
        prev[a] = disp;
        if (opt.want_hidden) {
          const double* hv = t.value(h[a]);
          as.trace.hidden.emplace_back(hv, hv + D);
        }
      }
    }
    res.samples.push_back(std::move(sample));
  }
  return res;
}

// ---------------------------------------------------------------------------
// discriminator

NodeId Model::discriminate(Bind& db, const std::vector<double>& h0_values,
                           const std::vector<geom::Vec2>& future_disp) {
  if (static_cast<int>(h0_values.size()) != cfg_.encoder_hidden)
    throw InvalidInput("discriminator h0 width mismatch");
  if (static_cast<int>(future_disp.size()) != cfg_.future_steps)
    throw InvalidInput("discriminator future length mismatch");
  diff::Tape& t = db.tape;
  const int H = cfg_.encoder_hidden;
  NodeId wih = p(db, "disc.lstm.wih");
  NodeId whh = p(db, "disc.lstm.whh");
  NodeId lb = p(db, "disc.lstm.b");
  NodeId h = t.leaf(h0_values.data(), H, 1, false);
  NodeId c = zero(db, H);
  for (const geom::Vec2& d : future_disp) {
    double xy[2] = {d.x, d.y};
    NodeId hc = t.lstm_cell(t.leaf(xy, 2, 1, false), h, c, wih, whh, lb);
    h = t.slice(hc, 0, H);
    c = t.slice(hc, H, H);
  }
  return t.linear(p(db, "disc.out.w"), h, p(db, "disc.out.b"));
}

double Model::discriminate_prob(const std::vector<double>& h0_values,
                                const std::vector<geom::Vec2>& future_disp) {
  diff::Tape tape;
  Bind db = bind_disc(tape, false);
  double logit = tape.scalar_value(discriminate(db, h0_values, future_disp));
  if (logit >= 0) return 1.0 / (1.0 + std::exp(-logit));
  double e = std::exp(logit);
  return e / (1.0 + e);
}

}  // namespace langtraj::model
