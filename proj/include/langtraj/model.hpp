#pragma once

// The prediction model: lane-set and agent encoders with one social round, a
// recurrent token generator, a token-conditioned displacement decoder with
// agent and token attention, a trajectory discriminator, and the vanilla /
// multihead baseline decoders. Forward passes build onto a caller-owned tape;
// parameters live in ParamStore and are bound per tape.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "langtraj/params.hpp"
#include "langtraj/scene.hpp"
#include "langtraj/tape.hpp"
#include "langtraj/vocab.hpp"

namespace langtraj::model {

enum class DecoderKind { Ours, Vanilla, Multihead };

std::string decoder_kind_name(DecoderKind k);
DecoderKind decoder_kind_from_name(const std::string& s);

struct ModelConfig {
  int encoder_hidden = 32;
  int token_embed = 4;
  int token_gen_hidden = 4;
  int attn_mlp_hidden = 4;
  int noise_dim = 8;
  int map_embed = 8;
  int decoder_hidden = 32;
  int max_agents = 5;
  int max_tokens = 8;
  int num_samples = 6;
  int past_steps = 20;
  int future_steps = 30;
  int map_max_segments = 32;
  int mh_heads = 6;
  int mh_dim = 10;
  double dropout = 0.2;
  double gumbel_tau = 1.0;
  DecoderKind decoder = DecoderKind::Ours;
  bool no_attention = false;
  bool no_agent_attention = false;

  void validate() const;
  std::string to_json_text() const;
  static ModelConfig from_json_text(const std::string& text);
};

struct EncoderOutput {
  // one entry per agent in the example (target first); h0 padded with zero
  // nodes up to max_agents so attention can index fixed slots
  std::vector<diff::NodeId> h0;        // max_agents nodes, each encoder_hidden
  std::vector<diff::NodeId> map_emb;   // per real agent, anchored at its t=0 pos
  std::vector<double> agent_mask;      // 1 = real agent, 0 = padding slot
  int n_agents = 0;
};

struct CaptionRollout {
  std::vector<int> tokens;              // length M
  std::vector<diff::NodeId> logits;     // M nodes of |vocab| (empty if forced)
  std::vector<diff::NodeId> embeds;     // M embedding nodes the decoder sees
  std::vector<double> z;                // noise vector used
};

struct DecoderTrace {
  // token attention rows, future_steps x M; empty under no_attention
  std::vector<std::vector<double>> token_weights;
  // per caption position: max_agents weights; empty vector at non-agent slots
  std::vector<std::vector<double>> agent_weights;
  // per-step decoder hidden, collected only when requested
  std::vector<std::vector<double>> hidden;
};

struct AgentSample {
  std::vector<geom::Vec2> future;            // absolute positions
  std::vector<diff::NodeId> disp_nodes;      // future_steps nodes of dim 2
  CaptionRollout caption;
  DecoderTrace trace;
};

struct SampleResult {
  std::vector<AgentSample> agents;  // index matches example agent order
};

struct RolloutResult {
  std::vector<SampleResult> samples;
  EncoderOutput enc;
};

struct RolloutOptions {
  int n_samples = 6;
  bool training = false;       // straight-through sampling + dropout
  bool soft_sampling = false;  // keep relaxed probs (finite-difference checks)
  bool want_hidden = false;    // record decoder hiddens in traces
  // force a caption instead of sampling; length must equal max_tokens.
  // forced_all conditions every agent (all-pad arm of information gain),
  // forced_target only the target (token edits)
  std::optional<std::vector<annotate::Token>> forced_all;
  std::optional<std::vector<annotate::Token>> forced_target;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& gen_params() { return gen_; }
  const ParamStore& gen_params() const { return gen_; }
  ParamStore& disc_params() { return disc_; }
  const ParamStore& disc_params() const { return disc_; }

  void init_params(Rng& rng);

  // per-tape parameter binding; trainable controls whether backward reaches
  // the store, training controls dropout (fed from dropout_rng)
  struct Bind {
    diff::Tape& tape;
    ParamStore* store;
    bool trainable;
    bool training;
    Rng* dropout_rng;
    std::map<std::string, diff::NodeId> cache;
  };
  Bind bind(diff::Tape& tape, bool trainable = false, bool training = false,
            Rng* dropout_rng = nullptr);
  Bind bind_disc(diff::Tape& tape, bool trainable = false);

  // encoders -----------------------------------------------------------
  diff::NodeId encode_map(Bind& b, const geom::MapGraph& map, geom::Vec2 anchor);
  EncoderOutput encode_agents(Bind& b, const data::PredictionExample& ex);

  // token generator -----------------------------------------------------
  // teacher: feeds gt tokens as previous inputs and echoes them; sample:
  // draws via gumbel-softmax (straight-through one-hots when hard)
  CaptionRollout generate_caption(Bind& b, diff::NodeId h0, diff::NodeId z,
                                  const std::vector<int>* teacher_tokens,
                                  Rng& gumbel_rng, bool hard);
  // embeds a fixed token sequence (no generator, no logits)
  CaptionRollout embed_caption(Bind& b, const std::vector<annotate::Token>& tokens);

  // attention pieces (exposed for tests) ---------------------------------
  // weights over max_agents slots from the token embedding alone; returns
  // kNoNode for non-agent tokens
  diff::NodeId agent_attention_weights(Bind& b, diff::NodeId y_m, int token_id,
                                       const std::vector<double>& mask);
  // pooled agent state projected back to embedding width
  diff::NodeId agent_attend(Bind& b, diff::NodeId y_m, int token_id,
                            const std::vector<diff::NodeId>& agent_h,
                            const std::vector<double>& mask);
  struct TokenAttnOut {
    diff::NodeId context;   // embedding-width context for the decoder
    diff::NodeId weights;   // M softmax weights (kNoNode under no_attention)
  };
  TokenAttnOut token_attend(Bind& b, const std::vector<diff::NodeId>& yprime,
                            const std::vector<int>& tokens, diff::NodeId h_prev);

  // rollout ---------------------------------------------------------------
  RolloutResult rollout(Bind& b, const data::PredictionExample& ex,
                        const RolloutOptions& opt, Rng& z_rng, Rng& gumbel_rng);

  // discriminator -----------------------------------------------------------
  // h0 and the future displacements enter as constants; returns the logit
  diff::NodeId discriminate(Bind& db, const std::vector<double>& h0_values,
                            const std::vector<geom::Vec2>& future_disp);
  double discriminate_prob(const std::vector<double>& h0_values,
                           const std::vector<geom::Vec2>& future_disp);

 private:
  diff::NodeId p(Bind& b, const std::string& name);
  diff::NodeId zero(Bind& b, int n);
  diff::NodeId ident(Bind& b, int n);
  diff::NodeId maybe_dropout(Bind& b, diff::NodeId x);
  diff::NodeId embed_token(Bind& b, int token_id);
  diff::NodeId embed_soft(Bind& b, diff::NodeId onehot);
  void add_lstm(const std::string& prefix, ParamStore& store, int input, int hidden);
  void init_lstm(const std::string& prefix, ParamStore& store, Rng& rng);

  ModelConfig cfg_;
  ParamStore gen_;
  ParamStore disc_;
};

}  // namespace langtraj::model
