#include "babylm/mlsm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "babylm/io.hpp"
#include "babylm/tokenizer.hpp"

namespace babylm::mlsm {

SparseCode sparse_encode(std::span<const float> x, const SemanticDictionary& dict,
                         double tol, int64_t max_sweeps) {
  if (static_cast<int64_t>(x.size()) != dict.dim)
    throw std::runtime_error("sparse_encode: vector length does not match dictionary dim");
  for (float v : x)
    if (!std::isfinite(v)) throw std::runtime_error("sparse_encode: non-finite input");

  const int64_t k = dict.k, d = dict.dim;
  SparseCode c(static_cast<size_t>(k), 0.0);
  std::vector<double> residual(x.begin(), x.end());  // r = x - D^T c
  std::vector<double> atom_sq(static_cast<size_t>(k), 0.0);
  for (int64_t j = 0; j < k; ++j) {
    double sq = 0.0;
    const float* aj = dict.atom(j);
    for (int64_t t = 0; t < d; ++t) sq += static_cast<double>(aj[t]) * aj[t];
    atom_sq[static_cast<size_t>(j)] = sq;
  }

  for (int64_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_delta = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double sq = atom_sq[static_cast<size_t>(j)];
      if (sq <= 0.0) continue;
      const float* aj = dict.atom(j);
      double rho = 0.0;
      for (int64_t t = 0; t < d; ++t) rho += aj[t] * residual[static_cast<size_t>(t)];
      rho += c[static_cast<size_t>(j)] * sq;
      const double next = std::max(0.0, (rho - dict.lambda) / sq);
      const double delta = next - c[static_cast<size_t>(j)];
      if (delta != 0.0) {
        for (int64_t t = 0; t < d; ++t) residual[static_cast<size_t>(t)] -= delta * aj[t];
        c[static_cast<size_t>(j)] = next;
      }
      max_delta = std::max(max_delta, std::abs(delta));
    }
    if (max_delta <= tol) break;
  }
  return c;
}

double sparse_objective(std::span<const float> x, const SemanticDictionary& dict,
                        const SparseCode& code) {
  const int64_t d = dict.dim;
  std::vector<double> recon(static_cast<size_t>(d), 0.0);
  for (int64_t j = 0; j < dict.k; ++j) {
    const double cj = code[static_cast<size_t>(j)];
    if (cj == 0.0) continue;
    const float* aj = dict.atom(j);
    for (int64_t t = 0; t < d; ++t) recon[static_cast<size_t>(t)] += cj * aj[t];
  }
  double obj = 0.0;
  for (int64_t t = 0; t < d; ++t) {
    const double diff = x[static_cast<size_t>(t)] - recon[static_cast<size_t>(t)];
    obj += 0.5 * diff * diff;
  }
  for (double cj : code) obj += dict.lambda * cj;
  return obj;
}

LatentTarget target_distribution(const SparseCode& code) {
  double sum = 0.0;
  for (double v : code) {
    if (v < 0.0) throw std::runtime_error("target_distribution: negative coefficient");
    sum += v;
  }
  LatentTarget out(code.size());
  if (sum > 0.0) {
    for (size_t i = 0; i < code.size(); ++i) out[i] = code[i] / sum;
  } else {
    const double u = 1.0 / static_cast<double>(code.size());
    for (auto& v : out) v = u;
  }
  return out;
}

double mlsm_loss(const LatentTarget& pred, const LatentTarget& target) {
  if (pred.size() != target.size()) throw std::runtime_error("mlsm_loss: length mismatch");
  double loss = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) loss -= target[i] * std::log(pred[i] + 1e-12);
  return loss;
}

namespace {

double row_norm(const float* row, int64_t d) {
  double sq = 0.0;
  for (int64_t t = 0; t < d; ++t) sq += static_cast<double>(row[t]) * row[t];
  return std::sqrt(sq);
}

// Picks k init atoms from data rows, skipping near-duplicates of already
// chosen directions; falls back to random unit vectors.
void init_atoms(SemanticDictionary& dict, const Tensor& rows, Rng& rng) {
  const int64_t n = rows.rows(), d = rows.cols(), k = dict.k;
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);

  int64_t filled = 0;
  for (int64_t oi = 0; oi < n && filled < k; ++oi) {
    const float* row = rows.data.data() + order[static_cast<size_t>(oi)] * d;
    const double norm = row_norm(row, d);
    if (norm < 1e-8) continue;
    bool duplicate = false;
    for (int64_t j = 0; j < filled && !duplicate; ++j) {
      double dot = 0.0;
      const float* aj = dict.atom(j);
      for (int64_t t = 0; t < d; ++t) dot += static_cast<double>(aj[t]) * row[t] / norm;
      duplicate = std::abs(dot) > 0.99;
    }
    if (duplicate) continue;
    float* dst = dict.atoms.data() + filled * d;
    for (int64_t t = 0; t < d; ++t) dst[t] = static_cast<float>(row[t] / norm);
    ++filled;
  }
  for (; filled < k; ++filled) {
    float* dst = dict.atoms.data() + filled * d;
    double sq = 0.0;
    std::vector<double> v(static_cast<size_t>(d));
    for (auto& t : v) {
      t = rng.gaussian();
      sq += t * t;
    }
    const double inv = 1.0 / std::sqrt(std::max(sq, 1e-30));
    for (int64_t t = 0; t < d; ++t) dst[t] = static_cast<float>(v[static_cast<size_t>(t)] * inv);
  }
}

}  // namespace

DictLearnResult dict_learn(const Tensor& hiddens, int64_t k, double lambda,
                           int64_t iterations, Rng& rng) {
  if (hiddens.ndim() != 2) throw std::runtime_error("dict_learn: hiddens must be [N x d]");
  const int64_t n = hiddens.rows(), d = hiddens.cols();
  if (n == 0) throw std::runtime_error("dict_learn: no data rows");
  if (k < 1) throw std::runtime_error("dict_learn: k must be positive");
  if (iterations < 1) throw std::runtime_error("dict_learn: iterations must be >= 1");
  if (lambda < 0.0) throw std::runtime_error("dict_learn: lambda must be non-negative");

  DictLearnResult res;
  SemanticDictionary& dict = res.dict;
  dict.k = k;
  dict.dim = d;
  dict.lambda = lambda;
  dict.atoms.assign(static_cast<size_t>(k * d), 0.0f);
  init_atoms(dict, hiddens, rng);

  std::vector<SparseCode> codes(static_cast<size_t>(n));
  for (int64_t it = 0; it < iterations; ++it) {
    // Encode step: rows are independent given the frozen dictionary.
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      std::span<const float> row(hiddens.data.data() + i * d, static_cast<size_t>(d));
      codes[static_cast<size_t>(i)] = sparse_encode(row, dict);
    }

    double obj = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      std::span<const float> row(hiddens.data.data() + i * d, static_cast<size_t>(d));
      obj += sparse_objective(row, dict, codes[static_cast<size_t>(i)]);
    }
    res.objective.push_back(obj);

    // Atom update: Gauss-Seidel over atoms, each solved exactly on the unit
    // sphere with codes fixed (C^T C and C^T X assembled once per iteration).
    std::vector<double> ctc(static_cast<size_t>(k * k), 0.0);
    std::vector<double> ctx(static_cast<size_t>(k * d), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      const SparseCode& c = codes[static_cast<size_t>(i)];
      for (int64_t a = 0; a < k; ++a) {
        const double ca = c[static_cast<size_t>(a)];
        if (ca == 0.0) continue;
        for (int64_t b = 0; b < k; ++b) ctc[static_cast<size_t>(a * k + b)] += ca * c[static_cast<size_t>(b)];
        const float* row = hiddens.data.data() + i * d;
        for (int64_t t = 0; t < d; ++t) ctx[static_cast<size_t>(a * d + t)] += ca * row[t];
      }
    }
    for (int64_t j = 0; j < k; ++j) {
      if (ctc[static_cast<size_t>(j * k + j)] <= 0.0) continue;  // unused atom: keep previous
      std::vector<double> b(static_cast<size_t>(d));
      for (int64_t t = 0; t < d; ++t) b[static_cast<size_t>(t)] = ctx[static_cast<size_t>(j * d + t)];
      for (int64_t l = 0; l < k; ++l) {
        if (l == j) continue;
        const double w = ctc[static_cast<size_t>(j * k + l)];
        if (w == 0.0) continue;
        const float* al = dict.atom(l);
        for (int64_t t = 0; t < d; ++t) b[static_cast<size_t>(t)] -= w * al[t];
      }
      double norm = 0.0;
      for (double v : b) norm += v * v;
      norm = std::sqrt(norm);
      if (norm < 1e-12) continue;  // rank-deficient direction: keep previous atom
      float* aj = dict.atoms.data() + j * d;
      for (int64_t t = 0; t < d; ++t) aj[t] = static_cast<float>(b[static_cast<size_t>(t)] / norm);
    }
  }
  return res;
}

void normalize_rows(Tensor& rows) {
  const int64_t n = rows.rows(), d = rows.cols();
  for (int64_t i = 0; i < n; ++i) {
    float* row = rows.data.data() + i * d;
    const double norm = row_norm(row, d);
    if (norm < 1e-12) continue;
    for (int64_t t = 0; t < d; ++t) row[t] = static_cast<float>(row[t] / norm);
  }
}

Tensor collect_hidden(const model::Model& teacher,
                      const std::vector<std::vector<int32_t>>& sequences, int64_t layer,
                      int64_t max_rows, Rng& rng) {
  if (layer < 0 || layer > teacher.cfg.num_layers)
    throw std::runtime_error("collect_hidden: layer " + std::to_string(layer) +
                             " out of range 0.." + std::to_string(teacher.cfg.num_layers));
  const int64_t d = teacher.cfg.hidden_dim;
  Tensor empty;
  empty.shape = {0, d};
  if (max_rows <= 0) return empty;

  std::vector<int64_t> order(sequences.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
  for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);

  std::vector<float> rows;
  int64_t count = 0;
  for (int64_t oi = 0; oi < static_cast<int64_t>(order.size()) && count < max_rows; ++oi) {
    const auto& ids = sequences[static_cast<size_t>(order[static_cast<size_t>(oi)])];
    if (ids.empty()) continue;
    auto hs = model::run_encoder(teacher, ids);
    const Tensor& h = hs[static_cast<size_t>(layer)];
    for (size_t pos = 0; pos < ids.size() && count < max_rows; ++pos) {
      const int32_t id = ids[pos];
      if (id == tok::kPad || id == tok::kSep || id == tok::kCls) continue;
      for (int64_t t = 0; t < d; ++t)
        rows.push_back(h.at(static_cast<int64_t>(pos), t));
      ++count;
    }
  }
  if (count == 0) return empty;
  return Tensor({count, d}, std::move(rows));
}

void save_dictionary(const SemanticDictionary& dict, const std::string& path) {
  std::ostringstream os(std::ios::binary);
  os.write("DICT v1", 7);
  io::write_u32(os, static_cast<uint32_t>(dict.k));
  io::write_u32(os, static_cast<uint32_t>(dict.dim));
  io::write_u32(os, static_cast<uint32_t>(dict.teacher_layer));
  io::write_f64(os, dict.lambda);
  io::write_f32_array(os, dict.atoms.data(), dict.atoms.size());
  const std::string payload = os.str();
  io::write_file_atomic_binary(path, payload.data(), payload.size());
}

SemanticDictionary load_dictionary(const std::string& path) {
  const std::string content = io::read_file(path);
  std::istringstream is(content, std::ios::binary);
  char magic[7];
  is.read(magic, 7);
  if (!is || std::memcmp(magic, "DICT v1", 7) != 0)
    throw std::runtime_error("not a dictionary file: " + path);
  SemanticDictionary dict;
  dict.k = io::read_u32(is);
  dict.dim = io::read_u32(is);
  dict.teacher_layer = io::read_u32(is);
  dict.lambda = io::read_f64(is);
  dict.atoms.resize(static_cast<size_t>(dict.k * dict.dim));
  io::read_f32_array(is, dict.atoms.data(), dict.atoms.size());
  if (!is) throw std::runtime_error("truncated dictionary: " + path);
  return dict;
}

}  // namespace babylm::mlsm
