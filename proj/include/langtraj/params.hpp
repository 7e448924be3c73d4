#pragma once

// Named parameter tensors plus the optimizer state that travels with them.
// Checkpoints are a text header (name/shape/offset per tensor) followed by a
// raw little-endian double blob and a trailing content checksum, so reruns
// can be compared byte for byte.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "langtraj/common.hpp"

namespace langtraj {

struct Param {
  std::string name;
  int rows = 0, cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> m, v;  // Adam moments, allocated on first step

  int size() const { return rows * cols; }
};

class ParamStore {
 public:
  Param& add(const std::string& name, int rows, int cols);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool has(const std::string& name) const;

  void zero_grad();
  std::size_t total_size() const;
  double grad_norm() const;  // global L2 norm across every tensor
  void scale_grad(double k);

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

 private:
  std::vector<Param> params_;  // insertion order, which fixes file layout
  std::map<std::string, int> index_;
};

// uniform init in [-bound, bound]; the usual choice is 1/sqrt(fan_in)
void init_uniform(Param& p, Rng& rng, double bound);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// one bias-corrected Adam update; `t` is the 1-based step count.
// Throws DivergenceError naming the tensor if a gradient is not finite.
void adam_step(ParamStore& store, const AdamConfig& cfg, int t);

// scales gradients down if their global norm exceeds max_norm; returns the
// norm before clipping
double clip_grad_norm(ParamStore& store, double max_norm);

// checkpoint IO ------------------------------------------------------------
void save_checkpoint(const ParamStore& store, const std::string& path,
                     const std::string& config_line = "");
ParamStore load_checkpoint(const std::string& path, std::string* config_line = nullptr);
// Adam moment tensors and the step count, stored next to the weights
void save_opt_state(const ParamStore& store, int step, const std::string& path);
int load_opt_state(ParamStore& store, const std::string& path);

// finite-difference check --------------------------------------------------
//
// Compares analytic gradients already accumulated in store.grad against
// central differences of loss_fn (which must re-evaluate the loss with the
// current parameter values). Checks at most max_coords coordinates per
// tensor, strided evenly; 0 means every coordinate.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
  int checked = 0;
};

GradCheckResult grad_check(ParamStore& store, const std::function<double()>& loss_fn,
                           int max_coords = 0, double h = 1e-5);

}  // namespace langtraj
