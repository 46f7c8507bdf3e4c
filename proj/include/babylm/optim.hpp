#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "babylm/graph.hpp"
#include "babylm/tensor.hpp"

namespace babylm {

// Named parameters plus their gradient buffers. Names are unique by map
// construction; gradients always mirror parameter shapes.
struct ParamStore {
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> grads;

  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return params.count(name) > 0; }
  void remove(const std::string& name);
  void zero_grads();
  int64_t total_params() const;
};

// Registers every parameter of a store as graph leaves for one forward pass.
struct BoundParams {
  std::map<std::string, ag::Var> vars;
  ag::Var at(const std::string& name) const;
};

BoundParams bind_params(ag::Graph& g, const ParamStore& store);

// Adds the graph's parameter gradients into store.grads (call after backward).
void accumulate_grads(const ag::Graph& g, const BoundParams& bound, ParamStore& store);

struct OptimState {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  std::map<std::string, Tensor> m;  // first moments
  std::map<std::string, Tensor> v;  // second moments
};

// One decoupled-weight-decay Adam step over store.grads. Throws on a
// non-finite gradient, naming the parameter. lr <= 0 is rejected except for
// exactly 0, which applies no parameter change (moments still update).
void adamw_step(ParamStore& store, OptimState& state);

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm. max_norm <= 0 disables clipping.
double clip_global_norm(ParamStore& store, double max_norm);

// Linear warmup to peak_lr over warmup_fraction of total_steps, then linear
// decay to zero at total_steps.
double lr_schedule(int64_t step, int64_t total_steps, double peak_lr, double warmup_fraction);

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  int64_t coords_checked = 0;
};

// Central-difference gradient check. `loss_fn` evaluates the scalar loss for
// the current parameters; `grad_fn` fills store.grads (zeroing them first is
// the caller's job inside grad_fn). Relative error per coordinate is
// |analytic - fd| / max(1, |analytic|). Coordinates are subsampled with a
// fixed stride (always including index 0) once a tensor exceeds
// max_coords_per_param.
GradCheckResult grad_check(ParamStore& store,
                           const std::function<double()>& loss_fn,
                           const std::function<void()>& grad_fn, double eps,
                           int64_t max_coords_per_param = 24);

}  // namespace babylm
