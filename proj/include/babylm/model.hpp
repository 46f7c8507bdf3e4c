#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "babylm/graph.hpp"
#include "babylm/optim.hpp"
#include "babylm/rng.hpp"

namespace babylm::model {

enum class ResidualMode { Standard, Elc };

struct ModelConfig {
  int64_t num_layers = 12;
  int64_t num_heads = 6;
  int64_t ff_hidden = 1024;
  int64_t hidden_dim = 64;
  int64_t max_seq_len = 128;
  int64_t vocab_size = 0;
  ResidualMode residual_mode = ResidualMode::Standard;

  void validate() const;
};

// A model is a config plus its parameter store. Heads are plain parameters
// living in the same store under "head." names.
struct Model {
  ModelConfig cfg;
  ParamStore params;
};

// Initializes encoder parameters (plus the ELC layer-weight logits when the
// config asks for them). Embedding and linear weights are N(0, 0.02).
Model make_model(const ModelConfig& cfg, Rng& rng);

// Adds head parameters on demand (no-ops when already present).
void add_mlm_head(Model& m, Rng& rng);
void add_latent_head(Model& m, int64_t k, Rng& rng);
void add_token_cls_head(Model& m, int64_t num_labels, Rng& rng);
void add_seq_cls_head(Model& m, int64_t num_labels, Rng& rng);

// Raw ELC logits padded to [L, L+1]; row r (layer r+1) has valid columns
// 0..r over outputs h_0..h_r, softmaxed into the effective combination.
inline constexpr const char* kElcAlphaName = "elc.alpha";
inline constexpr float kElcPrevLayerLogit = 4.0f;

// Sets every valid ELC logit equal so each row softmaxes to the uniform
// (equal-weight) combination.
void freeze_equal_weights(Model& m);

// Per-layer hidden states; h[0] is the embedding output, h[L] the last layer.
struct EncoderStates {
  std::vector<ag::Var> h;
  ag::Var last() const { return h.back(); }
};

// Embedding sublayer: token + position embedding, then layer norm.
ag::Var embed(ag::Graph& g, const ModelConfig& cfg, const BoundParams& bp,
              std::span<const int32_t> ids);

// Plain-tensor form of the ELC combination: x = sum_j row[j] * hs[j].
Tensor elc_combine(const std::vector<Tensor>& hs, std::span<const float> row);

// Full encoder. `ids` length must be <= max_seq_len; attention masks out
// [PAD] keys. Throws if any hidden state goes non-finite, naming the layer.
EncoderStates encoder_forward(ag::Graph& g, const ModelConfig& cfg, const BoundParams& bp,
                              std::span<const int32_t> ids);

// Heads. `positions` index rows of h_L.
ag::Var mlm_head(ag::Graph& g, const BoundParams& bp, ag::Var h_last,
                 const std::vector<int64_t>& positions);
// Returns a [P, k] matrix of per-position latent distributions (rows sum to 1).
ag::Var latent_head(ag::Graph& g, const BoundParams& bp, ag::Var h_last,
                    const std::vector<int64_t>& positions, int64_t k);
ag::Var token_cls_head(ag::Graph& g, const BoundParams& bp, ag::Var h_last);
ag::Var seq_cls_head(ag::Graph& g, const BoundParams& bp, ag::Var h_last);

// Convenience inference run without gradient tracking.
std::vector<Tensor> run_encoder(const Model& m, std::span<const int32_t> ids);

// Versioned binary checkpoint; save -> load is bit-exact.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace babylm::model
