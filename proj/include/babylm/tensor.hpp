#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "babylm/rng.hpp"

namespace babylm {

// Dense row-major float32 tensor. Values are treated as immutable once an
// operation has produced them; mutation happens only through owning code
// (parameter updates, in-place graph gradient accumulation).
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<int64_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw std::runtime_error("tensor data length does not match shape");
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d <= 0) throw std::runtime_error("tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int64_t> s) {
    const int64_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<float>(static_cast<size_t>(n), 0.0f));
  }

  static Tensor full(std::vector<int64_t> s, float v) {
    const int64_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<float>(static_cast<size_t>(n), v));
  }

  static Tensor randn(std::vector<int64_t> s, Rng& rng, float stddev) {
    Tensor t = zeros(std::move(s));
    for (auto& v : t.data) v = static_cast<float>(rng.gaussian() * stddev);
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t ndim() const { return static_cast<int64_t>(shape.size()); }

  int64_t rows() const {
    if (shape.size() != 2) throw std::runtime_error("rows(): tensor is not 2-D");
    return shape[0];
  }
  int64_t cols() const {
    if (shape.size() != 2) throw std::runtime_error("cols(): tensor is not 2-D");
    return shape[1];
  }

  float& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  float at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

}  // namespace babylm
