#include "babylm/config.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "babylm/io.hpp"

namespace babylm::cfg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': expected integer, got '" + value + "'");
  }
}

uint64_t parse_uint(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': expected unsigned integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': expected number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw UsageError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "adam_beta1",     "adam_beta2",    "adam_eps",        "batch_size",
      "checkpoint_epochs", "dict_iterations", "dict_k",     "dict_lambda",
      "dict_layer",     "dict_normalize", "dict_samples",   "dictionary",
      "epochs",         "ff_hidden",     "ft_batch_size",   "ft_epochs",
      "ft_lr",          "ft_seeds",      "grad_clip",       "hidden_dim",
      "keep_frac",      "lr",            "mask_frac",       "mask_rate",
      "num_heads",      "num_layers",    "objective",       "random_frac",
      "seed",           "seq_len",       "teacher_checkpoint", "threads",
      "tokenizer",      "vocab_size",    "warmup_fraction", "weight_decay",
  };
  return keys;
}

void apply_profile(Config& c, const std::string& profile) {
  if (profile == "roberta") {
    c.objective = "mlm";
    c.lr = 5e-5;
    c.seq_len = 512;
    c.num_layers = 12;
    c.batch_size = 8;
  } else if (profile == "elc") {
    c.objective = "elc";
    c.lr = 5e-4;
    c.seq_len = 128;
    c.num_layers = 12;
    c.batch_size = 128;
  } else if (profile == "mlsm") {
    c.objective = "mlsm";
    c.lr = 1e-4;
    c.seq_len = 128;
    c.num_layers = 12;
    c.batch_size = 64;
  } else {
    throw UsageError("unknown profile '" + profile + "' (expected roberta, elc, or mlsm)");
  }
}

void set_key(Config& c, const std::string& key, const std::string& value) {
  if (key == "num_layers") c.num_layers = parse_int(key, value);
  else if (key == "num_heads") c.num_heads = parse_int(key, value);
  else if (key == "ff_hidden") c.ff_hidden = parse_int(key, value);
  else if (key == "hidden_dim") c.hidden_dim = parse_int(key, value);
  else if (key == "vocab_size") c.vocab_size = parse_int(key, value);
  else if (key == "objective") {
    if (value != "mlm" && value != "elc" && value != "mlsm")
      throw UsageError("config key 'objective': expected mlm, elc, or mlsm, got '" + value + "'");
    c.objective = value;
  } else if (key == "lr") c.lr = parse_double(key, value);
  else if (key == "seq_len") c.seq_len = parse_int(key, value);
  else if (key == "batch_size") c.batch_size = parse_int(key, value);
  else if (key == "epochs") c.epochs = parse_int(key, value);
  else if (key == "mask_rate") c.mask_rate = parse_double(key, value);
  else if (key == "mask_frac") c.mask_frac = parse_double(key, value);
  else if (key == "random_frac") c.random_frac = parse_double(key, value);
  else if (key == "keep_frac") c.keep_frac = parse_double(key, value);
  else if (key == "seed") c.seed = parse_uint(key, value);
  else if (key == "warmup_fraction") c.warmup_fraction = parse_double(key, value);
  else if (key == "weight_decay") c.weight_decay = parse_double(key, value);
  else if (key == "adam_beta1") c.adam_beta1 = parse_double(key, value);
  else if (key == "adam_beta2") c.adam_beta2 = parse_double(key, value);
  else if (key == "adam_eps") c.adam_eps = parse_double(key, value);
  else if (key == "grad_clip") c.grad_clip = parse_double(key, value);
  else if (key == "checkpoint_epochs") {
    if (value != "auto") {
      std::stringstream ss(value);
      std::string part;
      while (std::getline(ss, part, ',')) parse_int(key, trim(part));
    }
    c.checkpoint_epochs = value;
  } else if (key == "tokenizer") c.tokenizer = value;
  else if (key == "teacher_checkpoint") c.teacher_checkpoint = value;
  else if (key == "dictionary") c.dictionary = value;
  else if (key == "dict_k") c.dict_k = parse_int(key, value);
  else if (key == "dict_lambda") c.dict_lambda = parse_double(key, value);
  else if (key == "dict_layer") c.dict_layer = parse_int(key, value);
  else if (key == "dict_normalize") c.dict_normalize = parse_bool(key, value);
  else if (key == "dict_iterations") c.dict_iterations = parse_int(key, value);
  else if (key == "dict_samples") c.dict_samples = parse_int(key, value);
  else if (key == "ft_lr") c.ft_lr = parse_double(key, value);
  else if (key == "ft_epochs") c.ft_epochs = parse_int(key, value);
  else if (key == "ft_seeds") c.ft_seeds = parse_int(key, value);
  else if (key == "ft_batch_size") c.ft_batch_size = parse_int(key, value);
  else if (key == "threads") c.threads = parse_int(key, value);
  else throw UsageError("unknown config key '" + key + "'");
}

Config parse_config_text(const std::string& text, Config base) {
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (seen.count(key))
      throw UsageError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    seen.insert(key);
    set_key(base, key, value);
  }
  return base;
}

Config load_config_file(const std::string& path, Config base) {
  return parse_config_text(io::read_file(path), std::move(base));
}

std::string render_config(const Config& c) {
  std::map<std::string, std::string> kv;
  kv["num_layers"] = std::to_string(c.num_layers);
  kv["num_heads"] = std::to_string(c.num_heads);
  kv["ff_hidden"] = std::to_string(c.ff_hidden);
  kv["hidden_dim"] = std::to_string(c.hidden_dim);
  kv["vocab_size"] = std::to_string(c.vocab_size);
  kv["objective"] = c.objective;
  kv["lr"] = format_double(c.lr);
  kv["seq_len"] = std::to_string(c.seq_len);
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["epochs"] = std::to_string(c.epochs);
  kv["mask_rate"] = format_double(c.mask_rate);
  kv["mask_frac"] = format_double(c.mask_frac);
  kv["random_frac"] = format_double(c.random_frac);
  kv["keep_frac"] = format_double(c.keep_frac);
  kv["seed"] = std::to_string(c.seed);
  kv["warmup_fraction"] = format_double(c.warmup_fraction);
  kv["weight_decay"] = format_double(c.weight_decay);
  kv["adam_beta1"] = format_double(c.adam_beta1);
  kv["adam_beta2"] = format_double(c.adam_beta2);
  kv["adam_eps"] = format_double(c.adam_eps);
  kv["grad_clip"] = format_double(c.grad_clip);
  kv["checkpoint_epochs"] = c.checkpoint_epochs;
  kv["tokenizer"] = c.tokenizer;
  kv["teacher_checkpoint"] = c.teacher_checkpoint;
  kv["dictionary"] = c.dictionary;
  kv["dict_k"] = std::to_string(c.dict_k);
  kv["dict_lambda"] = format_double(c.dict_lambda);
  kv["dict_layer"] = std::to_string(c.dict_layer);
  kv["dict_normalize"] = c.dict_normalize ? "true" : "false";
  kv["dict_iterations"] = std::to_string(c.dict_iterations);
  kv["dict_samples"] = std::to_string(c.dict_samples);
  kv["ft_lr"] = format_double(c.ft_lr);
  kv["ft_epochs"] = std::to_string(c.ft_epochs);
  kv["ft_seeds"] = std::to_string(c.ft_seeds);
  kv["ft_batch_size"] = std::to_string(c.ft_batch_size);
  kv["threads"] = std::to_string(c.threads);
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

train::Objective objective_from_string(const std::string& name) {
  if (name == "mlm") return train::Objective::MlmStandard;
  if (name == "elc") return train::Objective::MlmElc;
  if (name == "mlsm") return train::Objective::MlsmStudent;
  throw UsageError("unknown objective '" + name + "' (expected mlm, elc, or mlsm)");
}

train::PretrainConfig to_pretrain_config(const Config& c) {
  train::PretrainConfig p;
  p.objective = objective_from_string(c.objective);
  p.lr = c.lr;
  p.seq_len = c.seq_len;
  p.batch_size = c.batch_size;
  p.epochs = c.epochs;
  p.mask_rate = c.mask_rate;
  p.mask_frac = c.mask_frac;
  p.random_frac = c.random_frac;
  p.keep_frac = c.keep_frac;
  p.seed = c.seed;
  p.warmup_fraction = c.warmup_fraction;
  p.weight_decay = c.weight_decay;
  p.adam_beta1 = c.adam_beta1;
  p.adam_beta2 = c.adam_beta2;
  p.adam_eps = c.adam_eps;
  p.grad_clip = c.grad_clip;
  if (c.checkpoint_epochs != "auto") {
    std::stringstream ss(c.checkpoint_epochs);
    std::string part;
    while (std::getline(ss, part, ','))
      p.checkpoint_epochs.push_back(std::stoll(trim(part)));
  }
  return p;
}

model::ModelConfig to_model_config(const Config& c, int64_t vocab_size) {
  model::ModelConfig m;
  m.num_layers = c.num_layers;
  m.num_heads = c.num_heads;
  m.ff_hidden = c.ff_hidden;
  m.hidden_dim = c.hidden_dim;
  m.max_seq_len = c.seq_len;
  m.vocab_size = vocab_size;
  m.residual_mode =
      c.objective == "elc" ? model::ResidualMode::Elc : model::ResidualMode::Standard;
  return m;
}

}  // namespace babylm::cfg
