#pragma once

// Losses and the adversarial training loop: MoN displacement loss over N
// sampled futures, caption cross-entropy, caption-balanced batching, and the
// discriminator-then-generator update schedule.

#include <functional>
#include <vector>

#include "langtraj/model.hpp"
#include "langtraj/params.hpp"

namespace langtraj::train {

struct TrainConfig {
  double lr = 1e-3;
  int batch = 32;
  int epochs = 10;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double rebalance_ratio = 0.5;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;     // steps between checkpoints; 0 = final only
  bool lang_exclude_pad = false;

  void validate() const;
  std::string to_json_text() const;
  static TrainConfig from_json_text(const std::string& text);
};

struct LossBreakdown {
  double mon = 0.0;
  double lang = 0.0;
  double generator_total = 0.0;
  double discriminator = 0.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
};

// min over samples of the mean per-step Euclidean displacement. Each inner
// vector holds the per-step displacement nodes of one sample; positions are
// accumulated from `start`.
struct MonLoss {
  diff::NodeId node = diff::kNoNode;
  std::vector<double> ades;  // per-sample values
  int best = -1;
};
MonLoss loss_mon(diff::Tape& tape, const std::vector<std::vector<diff::NodeId>>& sample_disp,
                 const geom::Trajectory& gt_future, geom::Vec2 start);

// mean cross-entropy over caption positions; exclude_pad drops positions
// whose ground-truth token is <pad> from the mean
diff::NodeId loss_lang(diff::Tape& tape, const std::vector<diff::NodeId>& logits,
                       const std::vector<int>& gt_tokens, bool exclude_pad);

// Caption-balanced batch assembly: each batch carries round(ratio*batch)
// captioned examples, drawn with replacement once a pool runs out. ratio 0
// degrades to plain shuffled batches.
std::vector<std::vector<int>> rebalance(const std::vector<char>& captioned, int batch,
                                        double ratio, Rng& rng);

class Trainer {
 public:
  Trainer(model::Model& m, const TrainConfig& cfg);

  // one discriminator update then one generator update on the given batch
  LossBreakdown step(const std::vector<data::PredictionExample>& data,
                     const std::vector<int>& batch);

  // full loop over epochs; on_step fires after every step (1-based index)
  void run(const std::vector<data::PredictionExample>& data,
           const std::function<void(int, const LossBreakdown&)>& on_step);

  int steps_done() const { return gen_t_; }

 private:
  model::Model& model_;
  TrainConfig cfg_;
  AdamConfig adam_;
  int gen_t_ = 0;
  int disc_t_ = 0;
  Rng order_rng_, z_rng_, gumbel_rng_, dropout_rng_, disc_z_rng_, disc_gumbel_rng_;
};

}  // namespace langtraj::train
