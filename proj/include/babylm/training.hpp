#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "babylm/mlsm.hpp"
#include "babylm/model.hpp"
#include "babylm/optim.hpp"
#include "babylm/rng.hpp"
#include "babylm/tokenizer.hpp"

namespace babylm::train {

enum class Objective { MlmStandard, MlmElc, MlsmStudent };

std::string objective_name(Objective o);

struct PretrainConfig {
  Objective objective = Objective::MlmStandard;
  double lr = 1e-4;
  int64_t seq_len = 128;
  int64_t batch_size = 8;
  int64_t epochs = 1;
  double mask_rate = 0.15;
  double mask_frac = 0.8;
  double random_frac = 0.1;
  double keep_frac = 0.1;
  uint64_t seed = 42;
  double warmup_fraction = 0.01;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;                 // <= 0 disables
  std::vector<int64_t> checkpoint_epochs; // empty -> {E/10, E/2, E}

  void validate() const;
  std::vector<int64_t> resolved_checkpoint_epochs() const;
};

struct Corpus {
  std::vector<std::string> docs;
  int64_t word_count = 0;
};

// One document per line; blank lines dropped. Invalid UTF-8 fails with the
// byte offset.
Corpus ingest_corpus(const std::string& path);
Corpus corpus_from_lines(const std::string& text);

// Concatenates documents with [SEP] after each, chunks to seq_len, pads the
// final chunk with [PAD].
std::vector<std::vector<int32_t>> pack_sequences(
    const std::vector<std::vector<int32_t>>& doc_tokens, int64_t seq_len);

struct MaskedBatch {
  int64_t batch = 0;
  int64_t seq = 0;
  std::vector<int32_t> input_ids;                     // batch*seq, policy applied
  std::vector<int32_t> labels;                        // batch*seq, -1 = ignore
  std::vector<std::pair<int64_t, int64_t>> positions; // (row, col) of masked slots
  std::vector<int8_t> policy;                         // 0 mask, 1 random, 2 keep
};

// Independently selects each non-special position with mask_rate, then applies
// the mask/random/keep policy. `random_vocab_max` bounds random replacement
// ids (exclusive); replacements are drawn from non-special ids.
MaskedBatch mask_batch(const std::vector<std::vector<int32_t>>& batch,
                       const PretrainConfig& cfg, int64_t random_vocab_max, Rng& rng);

// Argmax of a latent target with ties to the smallest index; picks [MASK-n].
int64_t select_mask_token_index(const mlsm::LatentTarget& target);

struct TrainState {
  int64_t epoch = 0;        // epochs completed
  int64_t global_step = 0;
  double loss_ema = 0.0;
  bool ema_init = false;
  std::array<uint64_t, 4> rng_state{};
  OptimState optim;
};

void save_train_state(const TrainState& st, const std::string& path);
TrainState load_train_state(const std::string& path);

struct PretrainResult {
  TrainState state;
  std::vector<double> step_losses;
  std::vector<std::string> checkpoints;
  // MLSM diagnostics: extreme sums of all emitted latent targets.
  double target_sum_min = 1.0;
  double target_sum_max = 1.0;
};

struct PretrainJob {
  PretrainConfig cfg;
  std::string out_dir;                       // empty: keep everything in memory
  std::optional<TrainState> resume;
  int64_t stop_after_epoch = -1;             // -1: run to cfg.epochs
  // MLSM student wiring; ignored for the MLM objectives.
  const model::Model* teacher = nullptr;
  const mlsm::SemanticDictionary* dict = nullptr;
  bool normalize_hiddens = true;
};

// Runs the configured objective. Writes checkpoints, train states, and the
// per-step loss log under out_dir. Aborts on a non-finite loss, leaving the
// last good checkpoint in place.
PretrainResult pretrain(model::Model& m, const tok::Tokenizer& tokenizer,
                        const Corpus& corpus, const PretrainJob& job);

// Central-difference check of the full loss path for one objective on a
// built-in 2-layer, 8-dim, 2-head model with fixed seeds.
GradCheckResult grad_check_objective(Objective objective, double eps = 2e-3,
                                     int64_t max_coords_per_param = 6);

}  // namespace babylm::train
