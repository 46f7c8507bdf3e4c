#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "babylm/model.hpp"
#include "babylm/training.hpp"

namespace babylm::cfg {

// Flat key = value configuration. Every key is validated; unknown keys and
// unparsable values are hard errors.
struct Config {
  // model
  int64_t num_layers = 12;
  int64_t num_heads = 6;
  int64_t ff_hidden = 1024;
  int64_t hidden_dim = 64;
  int64_t vocab_size = 8000;
  // pretraining
  std::string objective = "mlm";  // mlm | elc | mlsm
  double lr = 1e-4;
  int64_t seq_len = 128;
  int64_t batch_size = 8;
  int64_t epochs = 10;
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
  double grad_clip = 1.0;
  std::string checkpoint_epochs = "auto";  // or comma-separated epoch list
  // artifact paths consumed by pretrain/build-dictionary
  std::string tokenizer;
  std::string teacher_checkpoint;
  std::string dictionary;
  // semantic dictionary
  int64_t dict_k = 64;
  double dict_lambda = 0.05;
  int64_t dict_layer = -1;  // -1: middle hidden layer
  bool dict_normalize = true;
  int64_t dict_iterations = 10;
  int64_t dict_samples = 10000;
  // finetuning
  double ft_lr = 5e-4;
  int64_t ft_epochs = 20;
  int64_t ft_seeds = 5;
  int64_t ft_batch_size = 8;
  // execution
  int64_t threads = 0;  // 0: library default
};

// Thrown for malformed keys/values; the CLI maps it to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::vector<std::string>& known_keys();

// Table 1 presets; profile is one of roberta | elc | mlsm.
void apply_profile(Config& c, const std::string& profile);

// Sets one key from its textual value. Throws UsageError naming the key on
// unknown keys or unparsable values.
void set_key(Config& c, const std::string& key, const std::string& value);

// `key = value` text, # comments, blank lines. Duplicate keys error with the
// line number. Values from the file override `base`.
Config parse_config_text(const std::string& text, Config base);
Config load_config_file(const std::string& path, Config base);

// Canonical echo: every key, sorted, `key = value`. Re-parses to an
// identical config.
std::string render_config(const Config& c);

train::PretrainConfig to_pretrain_config(const Config& c);
model::ModelConfig to_model_config(const Config& c, int64_t vocab_size);
train::Objective objective_from_string(const std::string& name);

}  // namespace babylm::cfg
