#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "babylm/model.hpp"
#include "babylm/rng.hpp"
#include "babylm/tensor.hpp"

namespace babylm::mlsm {

// k unit-norm atoms over the teacher hidden space. Atoms are stored row-major
// [k x dim]; lambda is the sparse-coding penalty.
struct SemanticDictionary {
  int64_t k = 0;
  int64_t dim = 0;
  int64_t teacher_layer = 0;
  double lambda = 0.05;
  std::vector<float> atoms;

  const float* atom(int64_t j) const { return atoms.data() + j * dim; }
};

using SparseCode = std::vector<double>;    // non-negative coefficients, length k
using LatentTarget = std::vector<double>;  // probability vector, length k

// Non-negative LASSO  min_{c>=0} 0.5||x - D^T c||^2 + lambda ||c||_1
// solved by cyclic coordinate descent. Converges far below the 1e-6 contract
// so that the solution path is stable in lambda.
SparseCode sparse_encode(std::span<const float> x, const SemanticDictionary& dict,
                         double tol = 1e-10, int64_t max_sweeps = 100000);

double sparse_objective(std::span<const float> x, const SemanticDictionary& dict,
                        const SparseCode& code);

// c / sum(c); uniform over k when the code is all-zero.
LatentTarget target_distribution(const SparseCode& code);

// Cross-entropy H(target, pred) = -sum target * log(pred + 1e-12).
double mlsm_loss(const LatentTarget& pred, const LatentTarget& target);

struct DictLearnResult {
  SemanticDictionary dict;
  std::vector<double> objective;  // one value per iteration, non-increasing
};

// Alternating minimization: encode all rows against the current atoms, then
// sphere-constrained per-atom least-squares updates. Rank-deficient atom
// updates keep the previous atom. Init draws distinct data rows.
DictLearnResult dict_learn(const Tensor& hiddens, int64_t k, double lambda,
                           int64_t iterations, Rng& rng);

// Runs the teacher over packed sequences and collects hidden vectors at
// `layer` for up to `max_rows` non-special token positions. Sequence order is
// shuffled with `rng`; rows come back [N x dim].
Tensor collect_hidden(const model::Model& teacher,
                      const std::vector<std::vector<int32_t>>& sequences, int64_t layer,
                      int64_t max_rows, Rng& rng);

// Scales every row to unit L2 norm (zero rows stay zero).
void normalize_rows(Tensor& rows);

void save_dictionary(const SemanticDictionary& dict, const std::string& path);
SemanticDictionary load_dictionary(const std::string& path);

}  // namespace babylm::mlsm
