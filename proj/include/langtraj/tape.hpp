#pragma once

// Reverse-mode autodiff on a flat tape. Values are computed eagerly as nodes
// are appended; backward() walks the tape once in reverse. Storage lives in
// arenas owned by the tape so a training step can reuse capacity via clear().
//
// Shapes are deliberately minimal: every node is a row-major (rows x cols)
// block, and almost everything is a vector (cols == 1 means "rows" entries).
// Matrices appear only as parameter leaves, stacked row sets and linear-map
// weights.

#include <cstdint>
#include <vector>

#include "langtraj/common.hpp"

namespace langtraj::diff {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  Linear,
  Concat,
  Slice,
  Tanh,
  Sigmoid,
  Softmax,
  MaskedSoftmax,
  CrossEntropy,
  BceWithLogit,
  LstmCell,
  StackRows,
  AttentionScores,
  WeightedSumRows,
  MeanRows,
  MeanAll,
  L2Norm,
  StraightThrough,
};

class Tape {
 public:
  // leaves -------------------------------------------------------------
  NodeId leaf(const double* v, int rows, int cols, bool requires_grad);
  NodeId leaf(const std::vector<double>& v, bool requires_grad = false);
  NodeId scalar(double v, bool requires_grad = false);
  // parameter leaf: values are copied in, and backward() adds the leaf's
  // gradient into ext_grad (which must stay alive until backward runs)
  NodeId param(const double* v, int rows, int cols, double* ext_grad);

  // elementwise and affine ops ------------------------------------------
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double k);
  NodeId linear(NodeId w, NodeId x, NodeId bias = kNoNode);  // w: (r x c), x: (c)
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);

  // shape ops ------------------------------------------------------------
  NodeId concat(const std::vector<NodeId>& parts);
  NodeId slice(NodeId a, int offset, int len);
  NodeId stack_rows(const std::vector<NodeId>& rows);  // k vectors of dim d -> (k x d)

  // distributions and losses ----------------------------------------------
  NodeId softmax(NodeId logits);
  // mask: same length, nonzero = usable; if nothing is usable the output is
  // uniform over all entries (and the gradient vanishes)
  NodeId masked_softmax(NodeId logits, NodeId mask);
  NodeId cross_entropy(NodeId logits, int target);       // scalar
  NodeId bce_with_logit(NodeId logit, double target);    // scalar
  NodeId l2_norm(NodeId v);                               // scalar
  NodeId mean_all(NodeId a);                              // scalar

  // recurrent and attention ops --------------------------------------------
  // fused LSTM cell; returns [h'; c'] of length 2*hidden. Gate layout in
  // w_ih/w_hh/b is i,f,g,o stacked along rows.
  NodeId lstm_cell(NodeId x, NodeId h, NodeId c, NodeId w_ih, NodeId w_hh, NodeId b);
  // scores_i = q . (W keys_i) / sqrt(d), keys: (n x d), W: (d x d), q: (d)
  NodeId attention_scores(NodeId q, NodeId w, NodeId keys);
  NodeId weighted_sum_rows(NodeId weights, NodeId rows);  // (n),(n x d) -> (d)
  NodeId mean_rows(NodeId rows);                          // (n x d) -> (d)

  // forward = the given hard one-hot, backward = identity into `soft`
  NodeId straight_through(NodeId soft, const std::vector<double>& hard);

  // execution ----------------------------------------------------------
  void backward(NodeId root);  // root must be scalar; seeds d(root)=1
  void clear();                // drop all nodes, keep arena capacity

  const double* value(NodeId id) const;
  const double* grad(NodeId id) const;  // valid after backward()
  int rows(NodeId id) const;
  int cols(NodeId id) const;
  int size(NodeId id) const;  // rows*cols
  double scalar_value(NodeId id) const;
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Op op;
    bool requires_grad;
    int rows, cols;
    int val;             // offset into vals_
    int a, b, c;         // input node ids (op-specific)
    int args, nargs;     // var-arity inputs (Concat/StackRows/LstmCell)
    int aux;             // offset into aux_ (op-specific scratch) or -1
    int i0, i1;          // op-specific ints
    double x0;           // op-specific scalar
    double* ext;         // external gradient sink for param leaves
  };

  NodeId push(Op op, int rows, int cols, bool requires_grad);
  int alloc_aux(int n);
  bool rg(NodeId id) const { return id != kNoNode && nodes_[id].requires_grad; }
  void check(NodeId id) const;
  void backward_node(NodeId id);
  void add_grad(NodeId id, const double* g, int n);

  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<double> grads_;
  std::vector<double> aux_;
  std::vector<NodeId> args_;
};

// Gumbel-softmax sample from raw logits. Perturbs with Gumbel noise drawn
// from rng, divides by tau and takes a softmax on the tape. When hard is set
// the returned node is the straight-through one-hot; otherwise the soft
// distribution. `index` is the sampled category either way.
struct GumbelSample {
  NodeId node;
  int index;
};
GumbelSample gumbel_softmax(Tape& tape, NodeId logits, double tau, Rng& rng, bool hard);

}  // namespace langtraj::diff
