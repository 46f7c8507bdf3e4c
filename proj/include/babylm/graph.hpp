#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "babylm/tensor.hpp"

namespace babylm::ag {

class Graph;

// Lightweight handle into a Graph's tape.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Dynamically recorded reverse-mode tape. Creation order is a topological
// order, so backward() walks node ids in reverse. Single-writer: one forward
// pass (and its backward) owns the graph exclusively.
class Graph {
 public:
  // Constant input; no gradient is tracked through it.
  Var input(Tensor value);

  // Leaf with gradient tracking (parameters).
  Var param(Tensor value, std::string name = {});

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;  // valid after backward()
  bool needs_grad(Var v) const;
  const std::string& name(Var v) const;
  size_t size() const { return nodes_.size(); }

  // Seeds d(loss) = 1 and propagates to every recorded node. `loss` must be
  // a scalar (numel 1). Throws if no forward pass has been recorded or the
  // handle is invalid.
  void backward(Var loss);
  bool backward_done() const { return backward_done_; }

  // --- recorded operations -------------------------------------------------
  Var matmul(Var a, Var b);                   // [n,k]x[k,m] -> [n,m]
  Var matmul_nt(Var a, Var b);                // [n,k]x[m,k] -> [n,m]
  Var add(Var a, Var b);                      // same shape
  Var mul(Var a, Var b);                      // elementwise
  Var scale(Var a, float s);
  Var add_bias(Var x, Var b);                 // [n,d] + [d] broadcast over rows
  Var gather_rows(Var x, std::vector<int64_t> idx);
  Var slice_cols(Var x, int64_t c0, int64_t c1);
  Var concat_cols(const std::vector<Var>& xs);
  Var layer_norm(Var x, Var gain, Var bias, float eps);
  Var gelu(Var x);
  Var softmax_rows(Var x);
  Var log_shift(Var x, float eps);            // log(x + eps) elementwise
  Var sum_all(Var x);                         // -> [1]
  // x = sum_j w[j] * h_j ; w has numel == hs.size()
  Var weighted_sum(const std::vector<Var>& hs, Var w);
  // Mean of -log softmax(logits)[target] over rows; targets.size() == rows.
  Var cross_entropy_mean(Var logits, std::vector<int64_t> targets);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::string name;
    std::vector<int32_t> parents;
    std::function<void(Graph&, int32_t)> back;  // adds into parents' grads
  };

  Var make(Tensor value, std::vector<int32_t> parents,
           std::function<void(Graph&, int32_t)> back);
  Node& node(Var v);
  const Node& node(Var v) const;
  Tensor& grad_mut(Var v);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace babylm::ag
