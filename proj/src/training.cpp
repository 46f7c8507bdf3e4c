#include "babylm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "babylm/io.hpp"

namespace babylm::train {

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::MlmStandard: return "mlm";
    case Objective::MlmElc: return "elc";
    case Objective::MlsmStudent: return "mlsm";
  }
  throw std::runtime_error("unknown objective");
}

void PretrainConfig::validate() const {
  if (epochs < 1) throw std::runtime_error("config: epochs must be >= 1");
  if (seq_len < 2) throw std::runtime_error("config: seq_len must be >= 2");
  if (batch_size < 1) throw std::runtime_error("config: batch_size must be >= 1");
  if (mask_rate < 0.0 || mask_rate > 1.0)
    throw std::runtime_error("config: mask_rate must be in [0,1]");
  const double frac_sum = mask_frac + random_frac + keep_frac;
  if (std::abs(frac_sum - 1.0) > 1e-9)
    throw std::runtime_error("config: mask/random/keep fractions must sum to 1");
  if (mask_frac < 0 || random_frac < 0 || keep_frac < 0)
    throw std::runtime_error("config: replacement fractions must be non-negative");
  if (lr <= 0.0) throw std::runtime_error("config: lr must be positive");
}

std::vector<int64_t> PretrainConfig::resolved_checkpoint_epochs() const {
  std::set<int64_t> eps;
  if (checkpoint_epochs.empty()) {
    eps.insert(std::max<int64_t>(1, epochs / 10));
    eps.insert(std::max<int64_t>(1, epochs / 2));
    eps.insert(epochs);
  } else {
    for (int64_t e : checkpoint_epochs)
      if (e >= 1 && e <= epochs) eps.insert(e);
    eps.insert(epochs);
  }
  return {eps.begin(), eps.end()};
}

Corpus corpus_from_lines(const std::string& text) {
  size_t bad = 0;
  if (!io::validate_utf8(text, &bad))
    throw std::runtime_error("corpus is not valid UTF-8 at byte offset " + std::to_string(bad));
  Corpus c;
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool blank = true;
    for (char ch : line)
      if (ch != ' ' && ch != '\t') blank = false;
    if (!blank) {
      bool in_word = false;
      for (char ch : line) {
        const bool ws = ch == ' ' || ch == '\t';
        if (!ws && !in_word) ++c.word_count;
        in_word = !ws;
      }
      c.docs.push_back(std::move(line));
    }
    if (end == text.size()) break;
    start = end + 1;
  }
  return c;
}

Corpus ingest_corpus(const std::string& path) { return corpus_from_lines(io::read_file(path)); }

std::vector<std::vector<int32_t>> pack_sequences(
    const std::vector<std::vector<int32_t>>& doc_tokens, int64_t seq_len) {
  if (seq_len < 2) throw std::runtime_error("pack_sequences: seq_len must be >= 2");
  std::vector<int32_t> stream;
  for (const auto& doc : doc_tokens) {
    stream.insert(stream.end(), doc.begin(), doc.end());
    stream.push_back(tok::kSep);
  }
  std::vector<std::vector<int32_t>> out;
  for (size_t off = 0; off < stream.size(); off += static_cast<size_t>(seq_len)) {
    std::vector<int32_t> chunk(stream.begin() + static_cast<int64_t>(off),
                               stream.begin() + std::min(stream.size(), off + static_cast<size_t>(seq_len)));
    chunk.resize(static_cast<size_t>(seq_len), tok::kPad);
    out.push_back(std::move(chunk));
  }
  return out;
}

namespace {

bool special_id(int32_t id) { return id == tok::kPad || id == tok::kCls || id == tok::kSep; }

}  // namespace

MaskedBatch mask_batch(const std::vector<std::vector<int32_t>>& batch,
                       const PretrainConfig& cfg, int64_t random_vocab_max, Rng& rng) {
  MaskedBatch out;
  out.batch = static_cast<int64_t>(batch.size());
  out.seq = out.batch > 0 ? static_cast<int64_t>(batch[0].size()) : 0;
  out.input_ids.reserve(static_cast<size_t>(out.batch * out.seq));
  out.labels.assign(static_cast<size_t>(out.batch * out.seq), -1);
  const int64_t random_span = random_vocab_max - tok::kNumSpecials;
  for (int64_t b = 0; b < out.batch; ++b) {
    if (static_cast<int64_t>(batch[static_cast<size_t>(b)].size()) != out.seq)
      throw std::runtime_error("mask_batch: ragged batch");
    for (int64_t s = 0; s < out.seq; ++s) {
      const int32_t orig = batch[static_cast<size_t>(b)][static_cast<size_t>(s)];
      int32_t value = orig;
      if (!special_id(orig) && cfg.mask_rate > 0.0 && rng.uniform() < cfg.mask_rate) {
        const double roll = rng.uniform();
        int8_t policy;
        if (roll < cfg.mask_frac) {
          policy = 0;
          value = tok::kMask;
        } else if (roll < cfg.mask_frac + cfg.random_frac) {
          policy = 1;
          value = static_cast<int32_t>(tok::kNumSpecials + rng.uniform_int(std::max<int64_t>(random_span, 1)));
        } else {
          policy = 2;
        }
        out.labels[static_cast<size_t>(b * out.seq + s)] = orig;
        out.positions.emplace_back(b, s);
        out.policy.push_back(policy);
      }
      out.input_ids.push_back(value);
    }
  }
  return out;
}

int64_t select_mask_token_index(const mlsm::LatentTarget& target) {
  if (target.empty()) throw std::runtime_error("select_mask_token_index: empty target");
  int64_t best = 0;
  for (size_t i = 1; i < target.size(); ++i)
    if (target[i] > target[static_cast<size_t>(best)]) best = static_cast<int64_t>(i);
  return best;
}

// ------------------------------------------------------------- train state

void save_train_state(const TrainState& st, const std::string& path) {
  std::ostringstream os(std::ios::binary);
  os.write("STATE v1", 8);
  io::write_u64(os, static_cast<uint64_t>(st.epoch));
  io::write_u64(os, static_cast<uint64_t>(st.global_step));
  io::write_f64(os, st.loss_ema);
  io::write_u32(os, st.ema_init ? 1u : 0u);
  for (uint64_t w : st.rng_state) io::write_u64(os, w);
  io::write_f64(os, st.optim.lr);
  io::write_f64(os, st.optim.weight_decay);
  io::write_f64(os, st.optim.beta1);
  io::write_f64(os, st.optim.beta2);
  io::write_f64(os, st.optim.eps);
  io::write_u64(os, static_cast<uint64_t>(st.optim.step));
  io::write_u32(os, static_cast<uint32_t>(st.optim.m.size()));
  for (const auto& [name, m] : st.optim.m) {
    const Tensor& v = st.optim.v.at(name);
    io::write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::write_u32(os, static_cast<uint32_t>(m.shape.size()));
    for (int64_t dim : m.shape) io::write_u32(os, static_cast<uint32_t>(dim));
    io::write_f32_array(os, m.data.data(), m.data.size());
    io::write_f32_array(os, v.data.data(), v.data.size());
  }
  const std::string payload = os.str();
  io::write_file_atomic_binary(path, payload.data(), payload.size());
}

TrainState load_train_state(const std::string& path) {
  const std::string content = io::read_file(path);
  std::istringstream is(content, std::ios::binary);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "STATE v1", 8) != 0)
    throw std::runtime_error("not a train state file: " + path);
  TrainState st;
  st.epoch = static_cast<int64_t>(io::read_u64(is));
  st.global_step = static_cast<int64_t>(io::read_u64(is));
  st.loss_ema = io::read_f64(is);
  st.ema_init = io::read_u32(is) == 1u;
  for (auto& w : st.rng_state) w = io::read_u64(is);
  st.optim.lr = io::read_f64(is);
  st.optim.weight_decay = io::read_f64(is);
  st.optim.beta1 = io::read_f64(is);
  st.optim.beta2 = io::read_f64(is);
  st.optim.eps = io::read_f64(is);
  st.optim.step = static_cast<int64_t>(io::read_u64(is));
  const uint32_t count = io::read_u32(is);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = io::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t ndim = io::read_u32(is);
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) d = io::read_u32(is);
    Tensor m = Tensor::zeros(shape);
    Tensor v = Tensor::zeros(shape);
    io::read_f32_array(is, m.data.data(), m.data.size());
    io::read_f32_array(is, v.data.data(), v.data.size());
    st.optim.m[name] = std::move(m);
    st.optim.v[name] = std::move(v);
  }
  if (!is) throw std::runtime_error("truncated train state: " + path);
  return st;
}

// ---------------------------------------------------------------- pretrain

namespace {

struct BatchLoss {
  ag::Var loss;
  int64_t positions = 0;
};

std::string checkpoint_path(const std::string& out_dir, int64_t epoch) {
  return out_dir + "/checkpoint_epoch" + std::to_string(epoch) + ".ckpt";
}

}  // namespace

PretrainResult pretrain(model::Model& m, const tok::Tokenizer& tokenizer,
                        const Corpus& corpus, const PretrainJob& job) {
  const PretrainConfig& cfg = job.cfg;
  cfg.validate();
  if (m.cfg.vocab_size != tokenizer.vocab_size())
    throw std::runtime_error("pretrain: model vocab " + std::to_string(m.cfg.vocab_size) +
                             " does not match tokenizer vocab " +
                             std::to_string(tokenizer.vocab_size()));
  const bool mlsm_mode = cfg.objective == Objective::MlsmStudent;
  if (cfg.objective == Objective::MlmElc && m.cfg.residual_mode != model::ResidualMode::Elc)
    throw std::runtime_error("pretrain: elc objective requires an elc-mode model");
  int64_t dict_k = 0;
  int64_t base_vocab = tokenizer.vocab_size();
  if (mlsm_mode) {
    if (!job.teacher || !job.dict)
      throw std::runtime_error("pretrain: mlsm objective requires a teacher and a dictionary");
    dict_k = job.dict->k;
    const int64_t mask_k = tokenizer.mask_token_count();
    if (mask_k != dict_k)
      throw std::runtime_error("pretrain: dictionary k " + std::to_string(dict_k) +
                               " does not match [MASK-n] token count " + std::to_string(mask_k));
    if (!m.params.has("head.latent.w") || m.params.at("head.latent.w").rows() != dict_k)
      throw std::runtime_error("pretrain: student latent head does not match dictionary k");
    if (job.dict->dim != job.teacher->cfg.hidden_dim)
      throw std::runtime_error("pretrain: dictionary dim does not match teacher hidden dim");
    base_vocab = tokenizer.vocab_size() - dict_k;
  } else if (!m.params.has("head.mlm.w")) {
    throw std::runtime_error("pretrain: model has no mlm head");
  }

  // Tokenize and pack.
  std::vector<std::vector<int32_t>> doc_tokens;
  doc_tokens.reserve(corpus.docs.size());
  for (const auto& doc : corpus.docs) doc_tokens.push_back(tokenizer.encode(doc));
  auto sequences = pack_sequences(doc_tokens, cfg.seq_len);
  if (sequences.empty()) throw std::runtime_error("no training data");

  const int64_t num_seq = static_cast<int64_t>(sequences.size());
  const int64_t batches_per_epoch = (num_seq + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = cfg.epochs * batches_per_epoch;

  PretrainResult res;
  TrainState& st = res.state;
  Rng rng(cfg.seed);
  if (job.resume) {
    st = *job.resume;
    rng.set_state(st.rng_state);
  } else {
    st.optim.lr = cfg.lr;
    st.optim.weight_decay = cfg.weight_decay;
    st.optim.beta1 = cfg.adam_beta1;
    st.optim.beta2 = cfg.adam_beta2;
    st.optim.eps = cfg.adam_eps;
  }

  const bool emit_files = !job.out_dir.empty();
  std::ofstream loss_log;
  if (emit_files) {
    std::filesystem::create_directories(job.out_dir);
    loss_log.open(job.out_dir + "/loss_log.tsv", job.resume ? std::ios::app : std::ios::trunc);
    if (!loss_log) throw std::runtime_error("cannot open loss log in " + job.out_dir);
  }

  const auto ckpt_epochs = cfg.resolved_checkpoint_epochs();
  std::string last_checkpoint;
  const int64_t stop_epoch = job.stop_after_epoch > 0
                                 ? std::min(job.stop_after_epoch, cfg.epochs)
                                 : cfg.epochs;

  const int64_t teacher_layer = mlsm_mode ? job.dict->teacher_layer : 0;

  for (int64_t epoch = st.epoch + 1; epoch <= stop_epoch; ++epoch) {
    // Epoch-derived shuffle keeps data order independent of resume points.
    std::vector<int64_t> order(static_cast<size_t>(num_seq));
    for (int64_t i = 0; i < num_seq; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(cfg.seed * 1000003ull + static_cast<uint64_t>(epoch));
    for (int64_t i = num_seq - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);

    for (int64_t b0 = 0; b0 < num_seq; b0 += cfg.batch_size) {
      std::vector<std::vector<int32_t>> batch;
      for (int64_t i = b0; i < std::min(num_seq, b0 + cfg.batch_size); ++i)
        batch.push_back(sequences[static_cast<size_t>(order[static_cast<size_t>(i)])]);

      MaskedBatch masked = mask_batch(batch, cfg, base_vocab, rng);
      if (masked.positions.empty()) continue;
      const int64_t total_positions = static_cast<int64_t>(masked.positions.size());
      try {

      // Per-position latent targets for the student objective, plus the
      // [MASK-n] substitution at masked input slots.
      std::vector<std::vector<int64_t>> seq_positions(batch.size());
      std::vector<std::vector<int64_t>> seq_targets_mlm(batch.size());
      std::vector<std::vector<float>> seq_targets_latent(batch.size());
      if (mlsm_mode) {
        for (int64_t b = 0; b < masked.batch; ++b) {
          std::vector<int64_t> positions;
          for (size_t p = 0; p < masked.positions.size(); ++p)
            if (masked.positions[p].first == b) positions.push_back(masked.positions[p].second);
          if (positions.empty()) continue;
          auto hs = model::run_encoder(*job.teacher, batch[static_cast<size_t>(b)]);
          const Tensor& h = hs[static_cast<size_t>(teacher_layer)];
          for (int64_t s : positions) {
            std::vector<float> hv(h.data.begin() + s * h.cols(),
                                  h.data.begin() + (s + 1) * h.cols());
            if (job.normalize_hiddens) {
              double sq = 0.0;
              for (float v : hv) sq += static_cast<double>(v) * v;
              const double norm = std::sqrt(sq);
              if (norm > 1e-12)
                for (auto& v : hv) v = static_cast<float>(v / norm);
            }
            auto code = mlsm::sparse_encode(hv, *job.dict);
            auto target = mlsm::target_distribution(code);
            double sum = 0.0;
            for (double v : target) sum += v;
            res.target_sum_min = std::min(res.target_sum_min, sum);
            res.target_sum_max = std::max(res.target_sum_max, sum);
            for (double v : target)
              seq_targets_latent[static_cast<size_t>(b)].push_back(static_cast<float>(v));
            seq_positions[static_cast<size_t>(b)].push_back(s);
          }
        }
        // Substitute [MASK-n] for policy-0 slots now that targets exist.
        std::vector<size_t> cursor(batch.size(), 0);
        for (size_t p = 0; p < masked.positions.size(); ++p) {
          const auto [b, s] = masked.positions[p];
          const auto& targets = seq_targets_latent[static_cast<size_t>(b)];
          const size_t idx = cursor[static_cast<size_t>(b)]++;
          if (masked.policy[p] == 0) {
            mlsm::LatentTarget t(targets.begin() + static_cast<int64_t>(idx) * dict_k,
                                 targets.begin() + static_cast<int64_t>(idx + 1) * dict_k);
            const int64_t n = select_mask_token_index(t);
            masked.input_ids[static_cast<size_t>(b * masked.seq + s)] =
                tokenizer.mask_token_id(n);
          }
        }
      } else {
        for (size_t p = 0; p < masked.positions.size(); ++p) {
          const auto [b, s] = masked.positions[p];
          seq_positions[static_cast<size_t>(b)].push_back(s);
          seq_targets_mlm[static_cast<size_t>(b)].push_back(
              masked.labels[static_cast<size_t>(b * masked.seq + s)]);
        }
      }

      // Forward all sequences of the batch on one tape; position-uniform mean.
      ag::Graph g;
      auto bp = bind_params(g, m.params);
      ag::Var total_loss;
      for (int64_t b = 0; b < masked.batch; ++b) {
        const auto& positions = seq_positions[static_cast<size_t>(b)];
        if (positions.empty()) continue;
        std::vector<int32_t> ids(masked.input_ids.begin() + b * masked.seq,
                                 masked.input_ids.begin() + (b + 1) * masked.seq);
        auto hs = model::encoder_forward(g, m.cfg, bp, ids);
        ag::Var piece;
        if (mlsm_mode) {
          auto pred = model::latent_head(g, bp, hs.last(), positions, dict_k);
          Tensor tgt({static_cast<int64_t>(positions.size()), dict_k},
                     seq_targets_latent[static_cast<size_t>(b)]);
          auto tgt_in = g.input(std::move(tgt));
          piece = g.scale(g.sum_all(g.mul(g.log_shift(pred, 1e-12f), tgt_in)), -1.0f);
        } else {
          auto logits = model::mlm_head(g, bp, hs.last(), positions);
          piece = g.scale(g.cross_entropy_mean(logits, seq_targets_mlm[static_cast<size_t>(b)]),
                          static_cast<float>(positions.size()));
        }
        total_loss = total_loss.valid() ? g.add(total_loss, piece) : piece;
      }
      auto loss = g.scale(total_loss, 1.0f / static_cast<float>(total_positions));
      const double loss_value = g.value(loss).data[0];
      if (!std::isfinite(loss_value)) throw std::runtime_error("non-finite loss");

      m.params.zero_grads();
      g.backward(loss);
      accumulate_grads(g, bp, m.params);
      clip_global_norm(m.params, cfg.grad_clip);
      st.optim.lr = lr_schedule(st.global_step, total_steps, cfg.lr, cfg.warmup_fraction);
      adamw_step(m.params, st.optim);

      st.global_step += 1;
      if (st.ema_init) {
        st.loss_ema = 0.99 * st.loss_ema + 0.01 * loss_value;
      } else {
        st.loss_ema = loss_value;
        st.ema_init = true;
      }
      res.step_losses.push_back(loss_value);
      if (emit_files) {
        char line[96];
        std::snprintf(line, sizeof(line), "%lld\t%lld\t%.9g\n",
                      static_cast<long long>(st.global_step), static_cast<long long>(epoch),
                      loss_value);
        loss_log << line;
      }
      } catch (const std::exception& e) {
        if (emit_files) loss_log.flush();
        throw std::runtime_error("training aborted: " + std::string(e.what()) + " at step " +
                                 std::to_string(st.global_step + 1) +
                                 (last_checkpoint.empty()
                                      ? std::string(" (no checkpoint written yet)")
                                      : "; last good checkpoint: " + last_checkpoint));
      }
    }

    st.epoch = epoch;
    st.rng_state = rng.state();
    if (emit_files &&
        std::find(ckpt_epochs.begin(), ckpt_epochs.end(), epoch) != ckpt_epochs.end()) {
      const std::string path = checkpoint_path(job.out_dir, epoch);
      model::save_checkpoint(m, path);
      save_train_state(st, job.out_dir + "/state_epoch" + std::to_string(epoch) + ".state");
      res.checkpoints.push_back(path);
      last_checkpoint = path;
    }
  }

  st.rng_state = rng.state();
  if (emit_files) {
    model::save_checkpoint(m, job.out_dir + "/model.ckpt");
    save_train_state(st, job.out_dir + "/train_state.bin");
    loss_log.flush();
  }
  return res;
}

GradCheckResult grad_check_objective(Objective objective, double eps,
                                     int64_t max_coords_per_param) {
  model::ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.ff_hidden = 16;
  cfg.hidden_dim = 8;
  cfg.max_seq_len = 12;
  cfg.vocab_size = 32;
  cfg.residual_mode = objective == Objective::MlmElc ? model::ResidualMode::Elc
                                                     : model::ResidualMode::Standard;
  const int64_t latent_k = 8;
  Rng rng(101);
  model::Model m = model::make_model(cfg, rng);
  if (objective == Objective::MlsmStudent) {
    model::add_latent_head(m, latent_k, rng);
  } else {
    model::add_mlm_head(m, rng);
  }

  Rng data_rng(55);
  std::vector<int32_t> ids;
  for (int i = 0; i < 10; ++i)
    ids.push_back(static_cast<int32_t>(tok::kNumSpecials +
                                       data_rng.uniform_int(cfg.vocab_size - tok::kNumSpecials)));
  const std::vector<int64_t> positions{1, 4, 7};
  std::vector<int64_t> targets;
  for (size_t i = 0; i < positions.size(); ++i)
    targets.push_back(tok::kNumSpecials +
                      data_rng.uniform_int(cfg.vocab_size - tok::kNumSpecials));
  // Fixed valid latent target distributions for the student path.
  Tensor latent_targets = Tensor::zeros({static_cast<int64_t>(positions.size()), latent_k});
  for (int64_t r = 0; r < latent_targets.rows(); ++r) {
    double sum = 0.0;
    for (int64_t c = 0; c < latent_k; ++c) {
      const double v = data_rng.uniform(0.05, 1.0);
      latent_targets.at(r, c) = static_cast<float>(v);
      sum += v;
    }
    for (int64_t c = 0; c < latent_k; ++c)
      latent_targets.at(r, c) = static_cast<float>(latent_targets.at(r, c) / sum);
  }

  auto build_loss = [&](ag::Graph& g, BoundParams& bp) {
    auto hs = model::encoder_forward(g, m.cfg, bp, ids);
    if (objective == Objective::MlsmStudent) {
      auto pred = model::latent_head(g, bp, hs.last(), positions, latent_k);
      auto tgt = g.input(latent_targets);
      return g.scale(g.sum_all(g.mul(g.log_shift(pred, 1e-12f), tgt)),
                     -1.0f / static_cast<float>(positions.size()));
    }
    auto logits = model::mlm_head(g, bp, hs.last(), positions);
    return g.cross_entropy_mean(logits, targets);
  };
  auto loss_fn = [&]() {
    ag::Graph g;
    auto bp = bind_params(g, m.params);
    return static_cast<double>(g.value(build_loss(g, bp)).data[0]);
  };
  auto grad_fn = [&]() {
    m.params.zero_grads();
    ag::Graph g;
    auto bp = bind_params(g, m.params);
    g.backward(build_loss(g, bp));
    accumulate_grads(g, bp, m.params);
  };
  return grad_check(m.params, loss_fn, grad_fn, eps, max_coords_per_param);
}

}  // namespace babylm::train
