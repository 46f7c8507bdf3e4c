#include "babylm/graph.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "babylm/kernels.hpp"

namespace babylm::ag {

namespace {

void check_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw std::runtime_error(std::string(op) + ": expected 2-D tensor, got " + t.shape_str());
}

}  // namespace

Graph::Node& Graph::node(Var v) {
  if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size()))
    throw std::runtime_error("invalid graph handle");
  return nodes_[static_cast<size_t>(v.id)];
}

const Graph::Node& Graph::node(Var v) const {
  if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size()))
    throw std::runtime_error("invalid graph handle");
  return nodes_[static_cast<size_t>(v.id)];
}

Var Graph::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, {}, {}, nullptr});
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Graph::param(Tensor value, std::string name) {
  nodes_.push_back(Node{std::move(value), Tensor{}, true, std::move(name), {}, nullptr});
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

const Tensor& Graph::grad(Var v) const {
  const Node& n = node(v);
  if (!backward_done_) throw std::runtime_error("gradient requested before backward");
  if (!n.needs_grad) throw std::runtime_error("gradient requested for a non-tracked node");
  return n.grad;
}

bool Graph::needs_grad(Var v) const { return node(v).needs_grad; }
const std::string& Graph::name(Var v) const { return node(v).name; }

Tensor& Graph::grad_mut(Var v) { return node(v).grad; }

Var Graph::make(Tensor value, std::vector<int32_t> parents,
                std::function<void(Graph&, int32_t)> back) {
  bool ng = false;
  for (int32_t p : parents) ng = ng || nodes_[static_cast<size_t>(p)].needs_grad;
  nodes_.push_back(Node{std::move(value), Tensor{}, ng, {}, std::move(parents),
                        ng ? std::move(back) : nullptr});
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

void Graph::backward(Var loss) {
  if (nodes_.empty()) throw std::runtime_error("backward called before any forward pass");
  Node& top = node(loss);
  if (top.value.numel() != 1) throw std::runtime_error("backward: loss must be a scalar");
  if (!top.needs_grad) throw std::runtime_error("backward: loss does not depend on any parameter");
  for (Node& n : nodes_) {
    if (n.needs_grad) n.grad = Tensor::zeros(n.value.shape);
  }
  backward_done_ = true;
  top.grad.data[0] = 1.0f;
  for (int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.needs_grad && n.back) n.back(*this, id);
  }
}

// ---------------------------------------------------------------------------

Var Graph::matmul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check_2d(ta, "matmul");
  check_2d(tb, "matmul");
  if (ta.cols() != tb.rows())
    throw std::runtime_error("matmul: inner dims mismatch " + ta.shape_str() + " x " + tb.shape_str());
  const int64_t n = ta.rows(), k = ta.cols(), m = tb.cols();
  Tensor out = Tensor::zeros({n, m});
  kernels::matmul(ta.data.data(), tb.data.data(), out.data.data(), n, k, m);
  return make(std::move(out), {a.id, b.id}, [n, k, m](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    Node& pa = g.nodes_[static_cast<size_t>(s.parents[0])];
    Node& pb = g.nodes_[static_cast<size_t>(s.parents[1])];
    if (pa.needs_grad)  // dA += dC * B^T
      kernels::matmul_nt(s.grad.data.data(), pb.value.data.data(), pa.grad.data.data(), n, m, k, true);
    if (pb.needs_grad)  // dB += A^T * dC
      kernels::matmul_tn(pa.value.data.data(), s.grad.data.data(), pb.grad.data.data(), n, k, m, true);
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check_2d(ta, "matmul_nt");
  check_2d(tb, "matmul_nt");
  if (ta.cols() != tb.cols())
    throw std::runtime_error("matmul_nt: inner dims mismatch " + ta.shape_str() + " x " + tb.shape_str());
  const int64_t n = ta.rows(), k = ta.cols(), m = tb.rows();
  Tensor out = Tensor::zeros({n, m});
  kernels::matmul_nt(ta.data.data(), tb.data.data(), out.data.data(), n, k, m);
  return make(std::move(out), {a.id, b.id}, [n, k, m](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    Node& pa = g.nodes_[static_cast<size_t>(s.parents[0])];
    Node& pb = g.nodes_[static_cast<size_t>(s.parents[1])];
    if (pa.needs_grad)  // dA += dC * B   ([n,m] x [m,k])
      kernels::matmul(s.grad.data.data(), pb.value.data.data(), pa.grad.data.data(), n, m, k, true);
    if (pb.needs_grad)  // dB += dC^T * A ([m,n] x [n,k])
      kernels::matmul_tn(s.grad.data.data(), pa.value.data.data(), pb.grad.data.data(), n, m, k, true);
  });
}

Var Graph::add(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb))
    throw std::runtime_error("add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
  return make(std::move(out), {a.id, b.id}, [](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    for (int pi = 0; pi < 2; ++pi) {
      Node& p = g.nodes_[static_cast<size_t>(s.parents[static_cast<size_t>(pi)])];
      if (!p.needs_grad) continue;
      for (size_t i = 0; i < s.grad.data.size(); ++i) p.grad.data[i] += s.grad.data[i];
    }
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb))
    throw std::runtime_error("mul: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
  return make(std::move(out), {a.id, b.id}, [](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    Node& pa = g.nodes_[static_cast<size_t>(s.parents[0])];
    Node& pb = g.nodes_[static_cast<size_t>(s.parents[1])];
    if (pa.needs_grad)
      for (size_t i = 0; i < s.grad.data.size(); ++i)
        pa.grad.data[i] += s.grad.data[i] * pb.value.data[i];
    if (pb.needs_grad)
      for (size_t i = 0; i < s.grad.data.size(); ++i)
        pb.grad.data[i] += s.grad.data[i] * pa.value.data[i];
  });
}

Var Graph::scale(Var a, float sc) {
  Tensor out = value(a);
  for (auto& v : out.data) v *= sc;
  return make(std::move(out), {a.id}, [sc](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    Node& p = g.nodes_[static_cast<size_t>(s.parents[0])];
    if (!p.needs_grad) return;
    for (size_t i = 0; i < s.grad.data.size(); ++i) p.grad.data[i] += s.grad.data[i] * sc;
  });
}

Var Graph::add_bias(Var x, Var b) {
  const Tensor& tx = value(x);
  const Tensor& tb = value(b);
  check_2d(tx, "add_bias");
  if (tb.numel() != tx.cols())
    throw std::runtime_error("add_bias: bias length " + tb.shape_str() + " does not match cols of " + tx.shape_str());
  const int64_t n = tx.rows(), d = tx.cols();
  Tensor out = tx;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out.data[static_cast<size_t>(i * d + j)] += tb.data[static_cast<size_t>(j)];
  return make(std::move(out), {x.id, b.id}, [n, d](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    Node& px = g.nodes_[static_cast<size_t>(s.parents[0])];
    Node& pb = g.nodes_[static_cast<size_t>(s.parents[1])];
    if (px.needs_grad)
      for (size_t i = 0; i < s.grad.data.size(); ++i) px.grad.data[i] += s.grad.data[i];
    if (pb.needs_grad) {
      for (int64_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) acc += s.grad.data[static_cast<size_t>(i * d + j)];
        pb.grad.data[static_cast<size_t>(j)] += static_cast<float>(acc);
      }
    }
  });
}

Var Graph::gather_rows(Var x, std::vector<int64_t> idx) {
  const Tensor& tx = value(x);
  check_2d(tx, "gather_rows");
  const int64_t d = tx.cols();
  for (int64_t i : idx)
    if (i < 0 || i >= tx.rows())
      throw std::runtime_error("gather_rows: index " + std::to_string(i) + " out of range for " + tx.shape_str());
  Tensor out = Tensor::zeros({static_cast<int64_t>(idx.size()), d});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int64_t j = 0; j < d; ++j) out.data[r * static_cast<size_t>(d) + static_cast<size_t>(j)] = tx.at(idx[r], j);
  return make(std::move(out), {x.id}, [idx = std::move(idx), d](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    Node& p = g.nodes_[static_cast<size_t>(s.parents[0])];
    if (!p.needs_grad) return;
    for (size_t r = 0; r < idx.size(); ++r)
      for (int64_t j = 0; j < d; ++j)
        p.grad.at(idx[r], j) += s.grad.data[r * static_cast<size_t>(d) + static_cast<size_t>(j)];
  });
}

Var Graph::slice_cols(Var x, int64_t c0, int64_t c1) {
  const Tensor& tx = value(x);
  check_2d(tx, "slice_cols");
  if (c0 < 0 || c1 <= c0 || c1 > tx.cols()) throw std::runtime_error("slice_cols: bad range");
  const int64_t n = tx.rows(), d = tx.cols(), w = c1 - c0;
  Tensor out = Tensor::zeros({n, w});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < w; ++j) out.at(i, j) = tx.at(i, c0 + j);
  return make(std::move(out), {x.id}, [n, d, c0, w](Graph& g, int32_t self) {
    (void)d;
    Node& s = g.nodes_[static_cast<size_t>(self)];
    Node& p = g.nodes_[static_cast<size_t>(s.parents[0])];
    if (!p.needs_grad) return;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < w; ++j) p.grad.at(i, c0 + j) += s.grad.at(i, j);
  });
}

Var Graph::concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::runtime_error("concat_cols: empty input");
  const int64_t n = value(xs[0]).rows();
  int64_t total = 0;
  for (Var v : xs) {
    check_2d(value(v), "concat_cols");
    if (value(v).rows() != n) throw std::runtime_error("concat_cols: row mismatch");
    total += value(v).cols();
  }
  Tensor out = Tensor::zeros({n, total});
  std::vector<int32_t> parents;
  std::vector<int64_t> widths;
  int64_t off = 0;
  for (Var v : xs) {
    const Tensor& t = value(v);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < t.cols(); ++j) out.at(i, off + j) = t.at(i, j);
    parents.push_back(v.id);
    widths.push_back(t.cols());
    off += t.cols();
  }
  return make(std::move(out), std::move(parents), [n, widths](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    int64_t off2 = 0;
    for (size_t pi = 0; pi < s.parents.size(); ++pi) {
      Node& p = g.nodes_[static_cast<size_t>(s.parents[pi])];
      const int64_t w = widths[pi];
      if (p.needs_grad)
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < w; ++j) p.grad.at(i, j) += s.grad.at(i, off2 + j);
      off2 += w;
    }
  });
}

Var Graph::layer_norm(Var x, Var gain, Var bias, float eps) {
  const Tensor& tx = value(x);
  check_2d(tx, "layer_norm");
  const int64_t n = tx.rows(), d = tx.cols();
  if (d == 0) throw std::runtime_error("layer_norm: zero-length axis");
  if (value(gain).numel() != d || value(bias).numel() != d)
    throw std::runtime_error("layer_norm: gain/bias length must match last axis");
  Tensor out = Tensor::zeros({n, d});
  auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(n * d));
  auto istd = std::make_shared<std::vector<float>>(static_cast<size_t>(n));
  kernels::layer_norm_rows(tx.data.data(), value(gain).data.data(), value(bias).data.data(),
                           out.data.data(), n, d, eps, xhat->data(), istd->data());
  return make(std::move(out), {x.id, gain.id, bias.id},
              [n, d, xhat, istd](Graph& g, int32_t self) {
                Node& s = g.nodes_[static_cast<size_t>(self)];
                Node& px = g.nodes_[static_cast<size_t>(s.parents[0])];
                Node& pg = g.nodes_[static_cast<size_t>(s.parents[1])];
                Node& pb = g.nodes_[static_cast<size_t>(s.parents[2])];
                // dgain/dbias accumulate only when tracked; use scratch otherwise.
                Tensor scratch_g = Tensor::zeros({d});
                Tensor scratch_b = Tensor::zeros({d});
                float* dg = pg.needs_grad ? pg.grad.data.data() : scratch_g.data.data();
                float* db = pb.needs_grad ? pb.grad.data.data() : scratch_b.data.data();
                if (px.needs_grad) {
                  kernels::layer_norm_rows_backward(s.grad.data.data(), xhat->data(),
                                                    istd->data(), pg.value.data.data(),
                                                    px.grad.data.data(), dg, db, n, d);
                } else {
                  Tensor scratch_x = Tensor::zeros({n, d});
                  kernels::layer_norm_rows_backward(s.grad.data.data(), xhat->data(),
                                                    istd->data(), pg.value.data.data(),
                                                    scratch_x.data.data(), dg, db, n, d);
                }
              });
}

Var Graph::gelu(Var x) {
  const Tensor& tx = value(x);
  Tensor out = Tensor::zeros(tx.shape);
  kernels::gelu(tx.data.data(), out.data.data(), tx.numel());
  return make(std::move(out), {x.id}, [](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    Node& p = g.nodes_[static_cast<size_t>(s.parents[0])];
    if (!p.needs_grad) return;
    kernels::gelu_backward(p.value.data.data(), s.grad.data.data(), p.grad.data.data(),
                           s.value.numel());
  });
}

Var Graph::softmax_rows(Var x) {
  const Tensor& tx = value(x);
  check_2d(tx, "softmax_rows");
  if (tx.cols() == 0 || tx.numel() == 0) throw std::runtime_error("empty logits");
  const int64_t n = tx.rows(), d = tx.cols();
  Tensor out = Tensor::zeros({n, d});
  kernels::softmax_rows(tx.data.data(), out.data.data(), n, d);
  return make(std::move(out), {x.id}, [n, d](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    Node& p = g.nodes_[static_cast<size_t>(s.parents[0])];
    if (!p.needs_grad) return;
    for (int64_t i = 0; i < n; ++i) {
      const float* pi = s.value.data.data() + i * d;
      const float* dyi = s.grad.data.data() + i * d;
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += static_cast<double>(dyi[j]) * pi[j];
      float* dxi = p.grad.data.data() + i * d;
      for (int64_t j = 0; j < d; ++j)
        dxi[j] += static_cast<float>(pi[j] * (static_cast<double>(dyi[j]) - dot));
    }
  });
}

Var Graph::log_shift(Var x, float eps) {
  const Tensor& tx = value(x);
  Tensor out = tx;
  for (auto& v : out.data) v = std::log(v + eps);
  return make(std::move(out), {x.id}, [eps](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    Node& p = g.nodes_[static_cast<size_t>(s.parents[0])];
    if (!p.needs_grad) return;
    for (size_t i = 0; i < s.grad.data.size(); ++i)
      p.grad.data[i] += s.grad.data[i] / (p.value.data[i] + eps);
  });
}

Var Graph::sum_all(Var x) {
  const Tensor& tx = value(x);
  double acc = 0.0;
  for (float v : tx.data) acc += v;
  Tensor out({1}, {static_cast<float>(acc)});
  return make(std::move(out), {x.id}, [](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    Node& p = g.nodes_[static_cast<size_t>(s.parents[0])];
    if (!p.needs_grad) return;
    const float dy = s.grad.data[0];
    for (auto& v : p.grad.data) v += dy;
  });
}

Var Graph::weighted_sum(const std::vector<Var>& hs, Var w) {
  if (hs.empty()) throw std::runtime_error("weighted_sum: empty input list");
  const Tensor& tw = value(w);
  if (tw.numel() != static_cast<int64_t>(hs.size()))
    throw std::runtime_error("weighted_sum: weight count " + std::to_string(tw.numel()) +
                             " does not match input count " + std::to_string(hs.size()));
  const Tensor& t0 = value(hs[0]);
  for (Var h : hs)
    if (!value(h).same_shape(t0)) throw std::runtime_error("weighted_sum: shape mismatch");
  Tensor out = Tensor::zeros(t0.shape);
  for (size_t j = 0; j < hs.size(); ++j) {
    const float wj = tw.data[j];
    const Tensor& hj = value(hs[j]);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += wj * hj.data[i];
  }
  std::vector<int32_t> parents;
  for (Var h : hs) parents.push_back(h.id);
  parents.push_back(w.id);
  return make(std::move(out), std::move(parents), [](Graph& g, int32_t self) {
    Node& s = g.nodes_[static_cast<size_t>(self)];
    const size_t count = s.parents.size() - 1;
    Node& pw = g.nodes_[static_cast<size_t>(s.parents[count])];
    for (size_t j = 0; j < count; ++j) {
      Node& ph = g.nodes_[static_cast<size_t>(s.parents[j])];
      const float wj = pw.value.data[j];
      if (ph.needs_grad)
        for (size_t i = 0; i < s.grad.data.size(); ++i) ph.grad.data[i] += wj * s.grad.data[i];
      if (pw.needs_grad) {
        double acc = 0.0;
        for (size_t i = 0; i < s.grad.data.size(); ++i)
          acc += static_cast<double>(s.grad.data[i]) * ph.value.data[i];
        pw.grad.data[j] += static_cast<float>(acc);
      }
    }
  });
}

Var Graph::cross_entropy_mean(Var logits, std::vector<int64_t> targets) {
  const Tensor& tl = value(logits);
  check_2d(tl, "cross_entropy_mean");
  const int64_t n = tl.rows(), d = tl.cols();
  if (static_cast<int64_t>(targets.size()) != n)
    throw std::runtime_error("cross_entropy_mean: target count mismatch");
  for (int64_t t : targets)
    if (t < 0 || t >= d) throw std::runtime_error("cross_entropy_mean: target id out of range");
  auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(n * d));
  kernels::softmax_rows(tl.data.data(), probs->data(), n, d);
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const float* xi = tl.data.data() + i * d;
    float mx = xi[0];
    for (int64_t j = 1; j < d; ++j) mx = xi[j] > mx ? xi[j] : mx;
    double lse = 0.0;
    for (int64_t j = 0; j < d; ++j) lse += std::exp(static_cast<double>(xi[j]) - mx);
    loss += mx + std::log(lse) - xi[targets[static_cast<size_t>(i)]];
  }
  loss /= static_cast<double>(n);
  Tensor out({1}, {static_cast<float>(loss)});
  return make(std::move(out), {logits.id},
              [n, d, probs, targets = std::move(targets)](Graph& g, int32_t self) {
                Node& s = g.nodes_[static_cast<size_t>(self)];
                Node& p = g.nodes_[static_cast<size_t>(s.parents[0])];
                if (!p.needs_grad) return;
                const float dy = s.grad.data[0] / static_cast<float>(n);
                for (int64_t i = 0; i < n; ++i) {
                  const float* pi = probs->data() + i * d;
                  float* dxi = p.grad.data.data() + i * d;
                  for (int64_t j = 0; j < d; ++j) dxi[j] += dy * pi[j];
                  dxi[targets[static_cast<size_t>(i)]] -= dy;
                }
              });
}

}  // namespace babylm::ag
