#include "babylm/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace babylm {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (params.count(name)) throw std::runtime_error("duplicate parameter name: " + name);
  grads[name] = Tensor::zeros(t.shape);
  auto [it, ok] = params.emplace(name, std::move(t));
  (void)ok;
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw std::runtime_error("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw std::runtime_error("unknown parameter: " + name);
  return it->second;
}

void ParamStore::remove(const std::string& name) {
  params.erase(name);
  grads.erase(name);
}

void ParamStore::zero_grads() {
  for (auto& [name, g] : grads)
    for (auto& v : g.data) v = 0.0f;
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

ag::Var BoundParams::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw std::runtime_error("unbound parameter: " + name);
  return it->second;
}

BoundParams bind_params(ag::Graph& g, const ParamStore& store) {
  BoundParams out;
  for (const auto& [name, t] : store.params) out.vars[name] = g.param(t, name);
  return out;
}

void accumulate_grads(const ag::Graph& g, const BoundParams& bound, ParamStore& store) {
  for (const auto& [name, var] : bound.vars) {
    const Tensor& gt = g.grad(var);
    Tensor& dst = store.grads.at(name);
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += gt.data[i];
  }
}

void adamw_step(ParamStore& store, OptimState& state) {
  if (state.lr < 0.0) throw std::runtime_error("adamw: negative learning rate");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : store.params) {
    const Tensor& g = store.grads.at(name);
    for (float gv : g.data)
      if (!std::isfinite(gv))
        throw std::runtime_error("adamw: non-finite gradient in parameter '" + name + "'");
    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      state.m[name] = Tensor::zeros(p.shape);
      state.v[name] = Tensor::zeros(p.shape);
      mit = state.m.find(name);
    }
    Tensor& m = mit->second;
    Tensor& v = state.v.at(name);
    for (size_t i = 0; i < p.data.size(); ++i) {
      const double gd = g.data[i];
      const double md = state.beta1 * m.data[i] + (1.0 - state.beta1) * gd;
      const double vd = state.beta2 * v.data[i] + (1.0 - state.beta2) * gd * gd;
      m.data[i] = static_cast<float>(md);
      v.data[i] = static_cast<float>(vd);
      if (state.lr == 0.0) continue;  // parameters stay bit-identical
      const double mhat = md / bc1;
      const double vhat = vd / bc2;
      double pd = p.data[i];
      pd -= state.lr * state.weight_decay * pd;  // decoupled decay
      pd -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
      p.data[i] = static_cast<float>(pd);
    }
  }
}

double clip_global_norm(ParamStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : store.grads)
    for (float v : g.data) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : store.grads)
      for (auto& v : g.data) v = static_cast<float>(v * s);
  }
  return norm;
}

double lr_schedule(int64_t step, int64_t total_steps, double peak_lr, double warmup_fraction) {
  if (total_steps <= 0) throw std::runtime_error("lr_schedule: total_steps must be positive");
  if (step < 0 || step > total_steps) throw std::runtime_error("lr_schedule: step out of range");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    throw std::runtime_error("lr_schedule: warmup_fraction must be in [0,1)");
  const int64_t warmup = static_cast<int64_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return peak_lr;
  return peak_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

GradCheckResult grad_check(ParamStore& store, const std::function<double()>& loss_fn,
                           const std::function<void()>& grad_fn, double eps,
                           int64_t max_coords_per_param) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw std::runtime_error("grad_check: eps must be in (0, 1e-2]");
  grad_fn();
  GradCheckResult res;
  for (auto& [name, p] : store.params) {
    const Tensor analytic = store.grads.at(name);  // copy; FD evals refill grads? no, loss only
    const int64_t n = p.numel();
    const int64_t stride = n <= max_coords_per_param ? 1 : (n + max_coords_per_param - 1) / max_coords_per_param;
    for (int64_t i = 0; i < n; i += stride) {
      const float orig = p.data[static_cast<size_t>(i)];
      p.data[static_cast<size_t>(i)] = static_cast<float>(orig + eps);
      const double fp = loss_fn();
      p.data[static_cast<size_t>(i)] = static_cast<float>(orig - eps);
      const double fm = loss_fn();
      p.data[static_cast<size_t>(i)] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("grad_check: non-finite loss while perturbing '" + name + "'");
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = analytic.data[static_cast<size_t>(i)];
      const double rel = std::abs(an - fd) / std::max(1.0, std::abs(an));
      ++res.coords_checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace babylm
