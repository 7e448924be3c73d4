#include "langtraj/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace langtraj::diff {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

NodeId Tape::push(Op op, int rows, int cols, bool requires_grad) {
  if (rows <= 0 || cols <= 0) throw InvalidInput("tape: node must have positive shape");
  Node n;
  n.op = op;
  n.requires_grad = requires_grad;
  n.rows = rows;
  n.cols = cols;
  n.val = static_cast<int>(vals_.size());
  n.a = n.b = n.c = kNoNode;
  n.args = -1;
  n.nargs = 0;
  n.aux = -1;
  n.i0 = n.i1 = 0;
  n.x0 = 0.0;
  n.ext = nullptr;
  vals_.resize(vals_.size() + static_cast<std::size_t>(rows) * cols, 0.0);
  nodes_.push_back(n);
  return static_cast<NodeId>(nodes_.size() - 1);
}

int Tape::alloc_aux(int n) {
  int off = static_cast<int>(aux_.size());
  aux_.resize(aux_.size() + n, 0.0);
  return off;
}

void Tape::check(NodeId id) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
    throw InvalidInput("tape: node id out of range");
}

const double* Tape::value(NodeId id) const {
  check(id);
  return vals_.data() + nodes_[id].val;
}

const double* Tape::grad(NodeId id) const {
  check(id);
  if (grads_.size() != vals_.size()) throw InvalidInput("tape: backward has not run");
  return grads_.data() + nodes_[id].val;
}

int Tape::rows(NodeId id) const {
  check(id);
  return nodes_[id].rows;
}

int Tape::cols(NodeId id) const {
  check(id);
  return nodes_[id].cols;
}

int Tape::size(NodeId id) const {
  check(id);
  return nodes_[id].rows * nodes_[id].cols;
}

double Tape::scalar_value(NodeId id) const {
  if (size(id) != 1) throw InvalidInput("tape: node is not a scalar");
  return *value(id);
}

void Tape::clear() {
  nodes_.clear();
  vals_.clear();
  grads_.clear();
  aux_.clear();
  args_.clear();
}

// ---------------------------------------------------------------------------
// leaves

NodeId Tape::leaf(const double* v, int rows, int cols, bool requires_grad) {
  NodeId id = push(Op::Leaf, rows, cols, requires_grad);
  std::copy(v, v + static_cast<std::size_t>(rows) * cols, vals_.begin() + nodes_[id].val);
  return id;
}

NodeId Tape::leaf(const std::vector<double>& v, bool requires_grad) {
  if (v.empty()) throw InvalidInput("tape: empty leaf");
  return leaf(v.data(), static_cast<int>(v.size()), 1, requires_grad);
}

NodeId Tape::scalar(double v, bool requires_grad) { return leaf(&v, 1, 1, requires_grad); }

NodeId Tape::param(const double* v, int rows, int cols, double* ext_grad) {
  NodeId id = leaf(v, rows, cols, true);
  nodes_[id].ext = ext_grad;
  return id;
}

// ---------------------------------------------------------------------------
// elementwise and affine

NodeId Tape::add(NodeId a, NodeId b) {
  if (size(a) != size(b)) throw InvalidInput("tape: add shape mismatch");
  NodeId id = push(Op::Add, nodes_[a].rows, nodes_[a].cols, rg(a) || rg(b));
  nodes_[id].a = a;
  nodes_[id].b = b;
  const double* va = value(a);
  const double* vb = value(b);
  double* out = vals_.data() + nodes_[id].val;
  for (int i = 0; i < size(id); ++i) out[i] = va[i] + vb[i];
  return id;
}

NodeId Tape::sub(NodeId a, NodeId b) {
  if (size(a) != size(b)) throw InvalidInput("tape: sub shape mismatch");
  NodeId id = push(Op::Sub, nodes_[a].rows, nodes_[a].cols, rg(a) || rg(b));
  nodes_[id].a = a;
  nodes_[id].b = b;
  const double* va = value(a);
  const double* vb = value(b);
  double* out = vals_.data() + nodes_[id].val;
  for (int i = 0; i < size(id); ++i) out[i] = va[i] - vb[i];
  return id;
}

NodeId Tape::mul(NodeId a, NodeId b) {
  if (size(a) != size(b)) throw InvalidInput("tape: mul shape mismatch");
  NodeId id = push(Op::Mul, nodes_[a].rows, nodes_[a].cols, rg(a) || rg(b));
  nodes_[id].a = a;
  nodes_[id].b = b;
  const double* va = value(a);
  const double* vb = value(b);
  double* out = vals_.data() + nodes_[id].val;
  for (int i = 0; i < size(id); ++i) out[i] = va[i] * vb[i];
  return id;
}

NodeId Tape::scale(NodeId a, double k) {
  NodeId id = push(Op::Scale, nodes_[a].rows, nodes_[a].cols, rg(a));
  nodes_[id].a = a;
  nodes_[id].x0 = k;
  const double* va = value(a);
  double* out = vals_.data() + nodes_[id].val;
  for (int i = 0; i < size(id); ++i) out[i] = k * va[i];
  return id;
}

NodeId Tape::linear(NodeId w, NodeId x, NodeId bias) {
  int r = nodes_[w].rows, c = nodes_[w].cols;
  if (size(x) != c) throw InvalidInput("tape: linear input dim mismatch");
  if (bias != kNoNode && size(bias) != r) throw InvalidInput("tape: linear bias dim mismatch");
  NodeId id = push(Op::Linear, r, 1, rg(w) || rg(x) || rg(bias));
  nodes_[id].a = w;
  nodes_[id].b = x;
  nodes_[id].c = bias;
  const double* vw = value(w);
  const double* vx = value(x);
  double* out = vals_.data() + nodes_[id].val;
  for (int i = 0; i < r; ++i) {
    double s = bias != kNoNode ? value(bias)[i] : 0.0;
    const double* row = vw + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) s += row[j] * vx[j];
    out[i] = s;
  }
  return id;
}

NodeId Tape::tanh(NodeId a) {
  NodeId id = push(Op::Tanh, nodes_[a].rows, nodes_[a].cols, rg(a));
  nodes_[id].a = a;
  const double* va = value(a);
  double* out = vals_.data() + nodes_[id].val;
  for (int i = 0; i < size(id); ++i) out[i] = std::tanh(va[i]);
  return id;
}

NodeId Tape::sigmoid(NodeId a) {
  NodeId id = push(Op::Sigmoid, nodes_[a].rows, nodes_[a].cols, rg(a));
  nodes_[id].a = a;
  const double* va = value(a);
  double* out = vals_.data() + nodes_[id].val;
  for (int i = 0; i < size(id); ++i) out[i] = stable_sigmoid(va[i]);
  return id;
}

// ---------------------------------------------------------------------------
// shape ops

NodeId Tape::concat(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw InvalidInput("tape: concat of nothing");
  int total = 0;
  bool needs = false;
  for (NodeId p : parts) {
    total += size(p);
    needs = needs || rg(p);
  }
  NodeId id = push(Op::Concat, total, 1, needs);
  nodes_[id].args = static_cast<int>(args_.size());
  nodes_[id].nargs = static_cast<int>(parts.size());
  args_.insert(args_.end(), parts.begin(), parts.end());
  double* out = vals_.data() + nodes_[id].val;
  for (NodeId p : parts) {
    const double* vp = value(p);
    out = std::copy(vp, vp + size(p), out);
  }
  return id;
}

NodeId Tape::slice(NodeId a, int offset, int len) {
  if (offset < 0 || len <= 0 || offset + len > size(a))
    throw InvalidInput("tape: slice out of range");
  NodeId id = push(Op::Slice, len, 1, rg(a));
  nodes_[id].a = a;
  nodes_[id].i0 = offset;
  nodes_[id].i1 = len;
  const double* va = value(a) + offset;
  std::copy(va, va + len, vals_.begin() + nodes_[id].val);
  return id;
}

NodeId Tape::stack_rows(const std::vector<NodeId>& rows) {
  if (rows.empty()) throw InvalidInput("tape: stack of nothing");
  int d = size(rows[0]);
  bool needs = false;
  for (NodeId r : rows) {
    if (size(r) != d) throw InvalidInput("tape: stacked rows differ in length");
    needs = needs || rg(r);
  }
  NodeId id = push(Op::StackRows, static_cast<int>(rows.size()), d, needs);
  nodes_[id].args = static_cast<int>(args_.size());
  nodes_[id].nargs = static_cast<int>(rows.size());
  args_.insert(args_.end(), rows.begin(), rows.end());
  double* out = vals_.data() + nodes_[id].val;
  for (NodeId r : rows) {
    const double* vr = value(r);
    out = std::copy(vr, vr + d, out);
  }
  return id;
}

// ---------------------------------------------------------------------------
// distributions and losses

NodeId Tape::softmax(NodeId logits) {
  int n = size(logits);
  NodeId id = push(Op::Softmax, n, 1, rg(logits));
  nodes_[id].a = logits;
  const double* v = value(logits);
  double* out = vals_.data() + nodes_[id].val;
  double mx = *std::max_element(v, v + n);
  double z = 0;
  for (int i = 0; i < n; ++i) z += (out[i] = std::exp(v[i] - mx));
  for (int i = 0; i < n; ++i) out[i] /= z;
  return id;
}

NodeId Tape::masked_softmax(NodeId logits, NodeId mask) {
  int n = size(logits);
  if (size(mask) != n) throw InvalidInput("tape: mask length mismatch");
  NodeId id = push(Op::MaskedSoftmax, n, 1, rg(logits));
  nodes_[id].a = logits;
  nodes_[id].b = mask;
  const double* v = value(logits);
  const double* m = value(mask);
  double* out = vals_.data() + nodes_[id].val;
  double mx = -std::numeric_limits<double>::infinity();
  int valid = 0;
  for (int i = 0; i < n; ++i)
    if (m[i] != 0.0) {
      mx = std::max(mx, v[i]);
      ++valid;
    }
  if (valid == 0) {
    // degenerate mask: fall back to a uniform, gradient-free distribution
    nodes_[id].i0 = 1;
    for (int i = 0; i < n; ++i) out[i] = 1.0 / n;
    return id;
  }
  double z = 0;
  for (int i = 0; i < n; ++i) {
    out[i] = m[i] != 0.0 ? std::exp(v[i] - mx) : 0.0;
    z += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= z;
  return id;
}

NodeId Tape::cross_entropy(NodeId logits, int target) {
  int n = size(logits);
  if (target < 0 || target >= n) throw InvalidInput("tape: cross entropy target out of range");
  NodeId id = push(Op::CrossEntropy, 1, 1, rg(logits));
  nodes_[id].a = logits;
  nodes_[id].i0 = target;
  nodes_[id].aux = alloc_aux(n);
  const double* v = value(logits);
  double* probs = aux_.data() + nodes_[id].aux;
  double mx = *std::max_element(v, v + n);
  double z = 0;
  for (int i = 0; i < n; ++i) z += (probs[i] = std::exp(v[i] - mx));
  for (int i = 0; i < n; ++i) probs[i] /= z;
  vals_[nodes_[id].val] = std::log(z) + mx - v[target];
  return id;
}

NodeId Tape::bce_with_logit(NodeId logit, double target) {
  if (size(logit) != 1) throw InvalidInput("tape: bce expects a scalar logit");
  NodeId id = push(Op::BceWithLogit, 1, 1, rg(logit));
  nodes_[id].a = logit;
  nodes_[id].x0 = target;
  double x = *value(logit);
  // stable softplus(x) - target*x
  vals_[nodes_[id].val] = std::max(x, 0.0) - target * x + std::log1p(std::exp(-std::abs(x)));
  return id;
}

NodeId Tape::l2_norm(NodeId v) {
  NodeId id = push(Op::L2Norm, 1, 1, rg(v));
  nodes_[id].a = v;
  const double* x = value(v);
  double s = 0;
  for (int i = 0; i < size(v); ++i) s += x[i] * x[i];
  vals_[nodes_[id].val] = std::sqrt(s);
  return id;
}

NodeId Tape::mean_all(NodeId a) {
  NodeId id = push(Op::MeanAll, 1, 1, rg(a));
  nodes_[id].a = a;
  const double* x = value(a);
  double s = 0;
  for (int i = 0; i < size(a); ++i) s += x[i];
  vals_[nodes_[id].val] = s / size(a);
  return id;
}

// ---------------------------------------------------------------------------
// recurrent / attention

NodeId Tape::lstm_cell(NodeId x, NodeId h, NodeId c, NodeId w_ih, NodeId w_hh, NodeId b) {
  int hidden = size(h);
  if (size(c) != hidden) throw InvalidInput("tape: lstm h/c size mismatch");
  if (nodes_[w_ih].rows != 4 * hidden || nodes_[w_hh].rows != 4 * hidden ||
      nodes_[w_hh].cols != hidden || size(b) != 4 * hidden ||
      nodes_[w_ih].cols != size(x))
    throw InvalidInput("tape: lstm weight shape mismatch");
  bool needs = rg(x) || rg(h) || rg(c) || rg(w_ih) || rg(w_hh) || rg(b);
  NodeId id = push(Op::LstmCell, 2 * hidden, 1, needs);
  nodes_[id].args = static_cast<int>(args_.size());
  nodes_[id].nargs = 6;
  args_.insert(args_.end(), {x, h, c, w_ih, w_hh, b});
  nodes_[id].i0 = hidden;
  nodes_[id].aux = alloc_aux(4 * hidden);  // gate activations i,f,g,o

  const double* vx = value(x);
  const double* vh = value(h);
  const double* vc = value(c);
  const double* wih = value(w_ih);
  const double* whh = value(w_hh);
  const double* vb = value(b);
  double* gates = aux_.data() + nodes_[id].aux;
  double* out = vals_.data() + nodes_[id].val;
  int din = size(x);
  for (int r = 0; r < 4 * hidden; ++r) {
    double s = vb[r];
    const double* wi = wih + static_cast<std::size_t>(r) * din;
    for (int j = 0; j < din; ++j) s += wi[j] * vx[j];
    const double* wh = whh + static_cast<std::size_t>(r) * hidden;
    for (int j = 0; j < hidden; ++j) s += wh[j] * vh[j];
    int gate = r / hidden;
    gates[r] = gate == 2 ? std::tanh(s) : stable_sigmoid(s);
  }
  const double* gi = gates;
  const double* gf = gates + hidden;
  const double* gg = gates + 2 * hidden;
  const double* go = gates + 3 * hidden;
  for (int j = 0; j < hidden; ++j) {
    double cn = gf[j] * vc[j] + gi[j] * gg[j];
    out[hidden + j] = cn;
    out[j] = go[j] * std::tanh(cn);
  }
  return id;
}

NodeId Tape::attention_scores(NodeId q, NodeId w, NodeId keys) {
  int d = size(q);
  if (nodes_[w].rows != d || nodes_[w].cols != d || nodes_[keys].cols != d)
    throw InvalidInput("tape: attention shape mismatch");
  int n = nodes_[keys].rows;
  NodeId id = push(Op::AttentionScores, n, 1, rg(q) || rg(w) || rg(keys));
  nodes_[id].a = q;
  nodes_[id].b = w;
  nodes_[id].c = keys;
  const double* vq = value(q);
  const double* vw = value(w);
  const double* vk = value(keys);
  double* out = vals_.data() + nodes_[id].val;
  double inv = 1.0 / std::sqrt(static_cast<double>(d));
  // u = W^T q, then score_i = u . k_i / sqrt(d)
  std::vector<double> u(d, 0.0);
  for (int r = 0; r < d; ++r)
    for (int cidx = 0; cidx < d; ++cidx) u[cidx] += vw[static_cast<std::size_t>(r) * d + cidx] * vq[r];
  for (int i = 0; i < n; ++i) {
    double s = 0;
    const double* k = vk + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) s += u[j] * k[j];
    out[i] = s * inv;
  }
  return id;
}

NodeId Tape::weighted_sum_rows(NodeId weights, NodeId rows_id) {
  int n = nodes_[rows_id].rows, d = nodes_[rows_id].cols;
  if (size(weights) != n) throw InvalidInput("tape: weighted sum shape mismatch");
  NodeId id = push(Op::WeightedSumRows, d, 1, rg(weights) || rg(rows_id));
  nodes_[id].a = weights;
  nodes_[id].b = rows_id;
  const double* w = value(weights);
  const double* r = value(rows_id);
  double* out = vals_.data() + nodes_[id].val;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[j] += w[i] * r[static_cast<std::size_t>(i) * d + j];
  return id;
}

NodeId Tape::mean_rows(NodeId rows_id) {
  int n = nodes_[rows_id].rows, d = nodes_[rows_id].cols;
  NodeId id = push(Op::MeanRows, d, 1, rg(rows_id));
  nodes_[id].a = rows_id;
  const double* r = value(rows_id);
  double* out = vals_.data() + nodes_[id].val;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[j] += r[static_cast<std::size_t>(i) * d + j] / n;
  return id;
}

NodeId Tape::straight_through(NodeId soft, const std::vector<double>& hard) {
  if (static_cast<int>(hard.size()) != size(soft))
    throw InvalidInput("tape: straight-through size mismatch");
  NodeId id = push(Op::StraightThrough, size(soft), 1, rg(soft));
  nodes_[id].a = soft;
  std::copy(hard.begin(), hard.end(), vals_.begin() + nodes_[id].val);
  return id;
}

// ---------------------------------------------------------------------------
// backward

void Tape::add_grad(NodeId id, const double* g, int n) {
  if (!rg(id)) return;
  double* dst = grads_.data() + nodes_[id].val;
  for (int i = 0; i < n; ++i) dst[i] += g[i];
}

void Tape::backward(NodeId root) {
  if (size(root) != 1) throw InvalidInput("tape: backward root must be scalar");
  grads_.assign(vals_.size(), 0.0);
  grads_[nodes_[root].val] = 1.0;
  for (NodeId id = root; id >= 0; --id) {
    if (nodes_[id].requires_grad) backward_node(id);
  }
  for (const Node& n : nodes_)
    if (n.ext != nullptr)
      for (int i = 0; i < n.rows * n.cols; ++i) n.ext[i] += grads_[n.val + i];
}

void Tape::backward_node(NodeId id) {
  const Node& n = nodes_[id];
  const double* g = grads_.data() + n.val;
  const int sz = n.rows * n.cols;
  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Add:
      add_grad(n.a, g, sz);
      add_grad(n.b, g, sz);
      break;
    case Op::Sub: {
      add_grad(n.a, g, sz);
      if (rg(n.b)) {
        double* gb = grads_.data() + nodes_[n.b].val;
        for (int i = 0; i < sz; ++i) gb[i] -= g[i];
      }
      break;
    }
    case Op::Mul: {
      const double* va = value(n.a);
      const double* vb = value(n.b);
      if (rg(n.a)) {
        double* ga = grads_.data() + nodes_[n.a].val;
        for (int i = 0; i < sz; ++i) ga[i] += g[i] * vb[i];
      }
      if (rg(n.b)) {
        double* gb = grads_.data() + nodes_[n.b].val;
        for (int i = 0; i < sz; ++i) gb[i] += g[i] * va[i];
      }
      break;
    }
    case Op::Scale: {
      if (rg(n.a)) {
        double* ga = grads_.data() + nodes_[n.a].val;
        for (int i = 0; i < sz; ++i) ga[i] += g[i] * n.x0;
      }
      break;
    }
    case Op::Linear: {
      int r = n.rows;
      int c = nodes_[n.a].cols;
      const double* vw = value(n.a);
      const double* vx = value(n.b);
      if (rg(n.b)) {
        double* gx = grads_.data() + nodes_[n.b].val;
        for (int i = 0; i < r; ++i) {
          const double* row = vw + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) gx[j] += g[i] * row[j];
        }
      }
      if (rg(n.a)) {
        double* gw = grads_.data() + nodes_[n.a].val;
        for (int i = 0; i < r; ++i) {
          double* row = gw + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) row[j] += g[i] * vx[j];
        }
      }
      if (n.c != kNoNode && rg(n.c)) {
        double* gb = grads_.data() + nodes_[n.c].val;
        for (int i = 0; i < r; ++i) gb[i] += g[i];
      }
      break;
    }
    case Op::Tanh: {
      const double* y = value(id);
      double* ga = grads_.data() + nodes_[n.a].val;
      for (int i = 0; i < sz; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }
    case Op::Sigmoid: {
      const double* y = value(id);
      double* ga = grads_.data() + nodes_[n.a].val;
      for (int i = 0; i < sz; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }
    case Op::Concat: {
      int off = 0;
      for (int k = 0; k < n.nargs; ++k) {
        NodeId p = args_[n.args + k];
        int len = size(p);
        add_grad(p, g + off, len);
        off += len;
      }
      break;
    }
    case Op::Slice:
      if (rg(n.a)) {
        double* ga = grads_.data() + nodes_[n.a].val + n.i0;
        for (int i = 0; i < n.i1; ++i) ga[i] += g[i];
      }
      break;
    case Op::StackRows: {
      int d = n.cols;
      for (int k = 0; k < n.nargs; ++k) add_grad(args_[n.args + k], g + k * d, d);
      break;
    }
    case Op::Softmax: {
      const double* y = value(id);
      double dot = 0;
      for (int i = 0; i < sz; ++i) dot += g[i] * y[i];
      double* ga = grads_.data() + nodes_[n.a].val;
      for (int i = 0; i < sz; ++i) ga[i] += y[i] * (g[i] - dot);
      break;
    }
    case Op::MaskedSoftmax: {
      if (n.i0 == 1) break;  // uniform fallback has no gradient
      const double* y = value(id);
      double dot = 0;
      for (int i = 0; i < sz; ++i) dot += g[i] * y[i];
      if (rg(n.a)) {
        double* ga = grads_.data() + nodes_[n.a].val;
        for (int i = 0; i < sz; ++i) ga[i] += y[i] * (g[i] - dot);
      }
      break;
    }
    case Op::CrossEntropy: {
      const double* probs = aux_.data() + n.aux;
      double* ga = grads_.data() + nodes_[n.a].val;
      int m = size(n.a);
      for (int i = 0; i < m; ++i) ga[i] += g[0] * (probs[i] - (i == n.i0 ? 1.0 : 0.0));
      break;
    }
    case Op::BceWithLogit: {
      double x = *value(n.a);
      double* ga = grads_.data() + nodes_[n.a].val;
      ga[0] += g[0] * (stable_sigmoid(x) - n.x0);
      break;
    }
    case Op::L2Norm: {
      double y = *value(id);
      double denom = std::max(y, 1e-12);
      const double* vx = value(n.a);
      double* ga = grads_.data() + nodes_[n.a].val;
      int m = size(n.a);
      for (int i = 0; i < m; ++i) ga[i] += g[0] * vx[i] / denom;
      break;
    }
    case Op::MeanAll: {
      double* ga = grads_.data() + nodes_[n.a].val;
      int m = size(n.a);
      for (int i = 0; i < m; ++i) ga[i] += g[0] / m;
      break;
    }
    case Op::LstmCell: {
      int hidden = n.i0;
      NodeId xid = args_[n.args], hid = args_[n.args + 1], cid = args_[n.args + 2];
      NodeId wih_id = args_[n.args + 3], whh_id = args_[n.args + 4], bid = args_[n.args + 5];
      const double* gates = aux_.data() + n.aux;
      const double* gi = gates;
      const double* gf = gates + hidden;
      const double* gg = gates + 2 * hidden;
      const double* go = gates + 3 * hidden;
      const double* out = value(id);  // [h'; c']
      const double* vc = value(cid);
      const double* gh_out = g;
      const double* gc_out = g + hidden;

      std::vector<double> gz(4 * hidden);
      std::vector<double> gc_prev(hidden);
      for (int j = 0; j < hidden; ++j) {
        double tc = std::tanh(out[hidden + j]);
        double gc = gc_out[j] + gh_out[j] * go[j] * (1.0 - tc * tc);
        double d_o = gh_out[j] * tc;
        double d_i = gc * gg[j];
        double d_f = gc * vc[j];
        double d_g = gc * gi[j];
        gc_prev[j] = gc * gf[j];
        gz[j] = d_i * gi[j] * (1.0 - gi[j]);
        gz[hidden + j] = d_f * gf[j] * (1.0 - gf[j]);
        gz[2 * hidden + j] = d_g * (1.0 - gg[j] * gg[j]);
        gz[3 * hidden + j] = d_o * go[j] * (1.0 - go[j]);
      }
      add_grad(cid, gc_prev.data(), hidden);
      add_grad(bid, gz.data(), 4 * hidden);
      int din = size(xid);
      const double* vx = value(xid);
      const double* vh = value(hid);
      if (rg(wih_id)) {
        double* gw = grads_.data() + nodes_[wih_id].val;
        for (int r = 0; r < 4 * hidden; ++r) {
          double* row = gw + static_cast<std::size_t>(r) * din;
          for (int j = 0; j < din; ++j) row[j] += gz[r] * vx[j];
        }
      }
      if (rg(whh_id)) {
        double* gw = grads_.data() + nodes_[whh_id].val;
        for (int r = 0; r < 4 * hidden; ++r) {
          double* row = gw + static_cast<std::size_t>(r) * hidden;
          for (int j = 0; j < hidden; ++j) row[j] += gz[r] * vh[j];
        }
      }
      if (rg(xid)) {
        double* gx = grads_.data() + nodes_[xid].val;
        const double* wih = value(wih_id);
        for (int r = 0; r < 4 * hidden; ++r) {
          const double* row = wih + static_cast<std::size_t>(r) * din;
          for (int j = 0; j < din; ++j) gx[j] += gz[r] * row[j];
        }
      }
      if (rg(hid)) {
        double* gh = grads_.data() + nodes_[hid].val;
        const double* whh = value(whh_id);
        for (int r = 0; r < 4 * hidden; ++r) {
          const double* row = whh + static_cast<std::size_t>(r) * hidden;
          for (int j = 0; j < hidden; ++j) gh[j] += gz[r] * row[j];
        }
      }
      break;
    }
    case Op::AttentionScores: {
      int d = size(n.a);
      int cnt = n.rows;
      double inv = 1.0 / std::sqrt(static_cast<double>(d));
      const double* vq = value(n.a);
      const double* vw = value(n.b);
      const double* vk = value(n.c);
      // gk_i = g_i * (W^T q) / sqrt(d); gq = W (sum_i g_i k_i) / sqrt(d);
      // gW = q (sum_i g_i k_i)^T / sqrt(d)
      std::vector<double> gk_sum(d, 0.0);
      for (int i = 0; i < cnt; ++i) {
        const double* k = vk + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) gk_sum[j] += g[i] * k[j];
      }
      if (rg(n.a)) {
        double* gq = grads_.data() + nodes_[n.a].val;
        for (int r = 0; r < d; ++r) {
          double s = 0;
          const double* row = vw + static_cast<std::size_t>(r) * d;
          for (int j = 0; j < d; ++j) s += row[j] * gk_sum[j];
          gq[r] += s * inv;
        }
      }
      if (rg(n.b)) {
        double* gw = grads_.data() + nodes_[n.b].val;
        for (int r = 0; r < d; ++r) {
          double* row = gw + static_cast<std::size_t>(r) * d;
          for (int j = 0; j < d; ++j) row[j] += vq[r] * gk_sum[j] * inv;
        }
      }
      if (rg(n.c)) {
        std::vector<double> u(d, 0.0);  // W^T q
        for (int r = 0; r < d; ++r)
          for (int j = 0; j < d; ++j) u[j] += vw[static_cast<std::size_t>(r) * d + j] * vq[r];
        double* gk = grads_.data() + nodes_[n.c].val;
        for (int i = 0; i < cnt; ++i) {
          double* row = gk + static_cast<std::size_t>(i) * d;
          for (int j = 0; j < d; ++j) row[j] += g[i] * u[j] * inv;
        }
      }
      break;
    }
    case Op::WeightedSumRows: {
      int cnt = nodes_[n.b].rows, d = nodes_[n.b].cols;
      const double* w = value(n.a);
      const double* r = value(n.b);
      if (rg(n.a)) {
        double* gw = grads_.data() + nodes_[n.a].val;
        for (int i = 0; i < cnt; ++i) {
          double s = 0;
          const double* row = r + static_cast<std::size_t>(i) * d;
          for (int j = 0; j < d; ++j) s += g[j] * row[j];
          gw[i] += s;
        }
      }
      if (rg(n.b)) {
        double* gr = grads_.data() + nodes_[n.b].val;
        for (int i = 0; i < cnt; ++i) {
          double* row = gr + static_cast<std::size_t>(i) * d;
          for (int j = 0; j < d; ++j) row[j] += w[i] * g[j];
        }
      }
      break;
    }
    case Op::MeanRows: {
      int cnt = nodes_[n.a].rows, d = nodes_[n.a].cols;
      if (rg(n.a)) {
        double* gr = grads_.data() + nodes_[n.a].val;
        for (int i = 0; i < cnt; ++i)
          for (int j = 0; j < d; ++j) gr[static_cast<std::size_t>(i) * d + j] += g[j] / cnt;
      }
      break;
    }
    case Op::StraightThrough:
      add_grad(n.a, g, sz);
      break;
  }
}

// ---------------------------------------------------------------------------

GumbelSample gumbel_softmax(Tape& tape, NodeId logits, double tau, Rng& rng, bool hard) {
  if (tau <= 0) throw InvalidInput("gumbel softmax: tau must be positive");
  int n = tape.size(logits);
  std::vector<double> noise(n);
  for (double& v : noise) v = rng.gumbel();
  NodeId pert = tape.scale(tape.add(logits, tape.leaf(noise)), 1.0 / tau);
  NodeId probs = tape.softmax(pert);
  const double* p = tape.value(pert);
  int index = static_cast<int>(std::max_element(p, p + n) - p);
  if (!hard) return {probs, index};
  std::vector<double> onehot(n, 0.0);
  onehot[index] = 1.0;
  return {tape.straight_through(probs, onehot), index};
}

}  // namespace langtraj::diff
