#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "babylm/io.hpp"
#include "babylm/training.hpp"

using namespace babylm;
using namespace babylm::train;

namespace {

std::filesystem::path tmp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::vector<std::string> toy_sentences() {
  return {
      "umntwana uhamba esikolweni", "abantwana bayafunda kakuhle", "utitshala ufundisa isifundo",
      "umfundi ubhala incwadi",     "iincwadi zisetafileni",       "umama upheka ukutya",
      "utata usebenza edolophini",  "abantu bathetha isixhosa",    "intombazana incuma kamnandi",
      "inkwenkwe idlala ibhola",
  };
}

tok::Tokenizer toy_tokenizer() { return tok::wordpiece_train(toy_sentences(), 160); }

model::ModelConfig toy_config(const tok::Tokenizer& t, model::ResidualMode mode) {
  model::ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.ff_hidden = 32;
  cfg.hidden_dim = 16;
  cfg.max_seq_len = 24;
  cfg.vocab_size = t.vocab_size();
  cfg.residual_mode = mode;
  return cfg;
}

PretrainConfig toy_pretrain_config(Objective obj) {
  PretrainConfig cfg;
  cfg.objective = obj;
  cfg.lr = 2e-3;
  cfg.seq_len = 24;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.seed = 9;
  return cfg;
}

Corpus toy_corpus() {
  Corpus c;
  c.docs = toy_sentences();
  return c;
}

}  // namespace

TEST_CASE("ingest_corpus: blank handling, counts, invalid utf8") {
  auto dir = tmp_dir("babylm_ingest");
  {
    std::ofstream f(dir / "empty.txt");
  }
  CHECK(ingest_corpus((dir / "empty.txt").string()).docs.empty());

  {
    std::ofstream f(dir / "three.txt");
    f << "one two three\n\nfour five\n";
  }
  auto c = ingest_corpus((dir / "three.txt").string());
  REQUIRE(c.docs.size() == 2);
  CHECK(c.docs[0] == "one two three");

  // Word count matches an independent whitespace-split count.
  int64_t expected = 0;
  for (const auto& doc : c.docs) {
    std::istringstream is(doc);
    std::string w;
    while (is >> w) ++expected;
  }
  CHECK(c.word_count == expected);

  {
    std::ofstream f(dir / "bad.txt", std::ios::binary);
    f << "ok\n";
    f.put(static_cast<char>(0xc3));  // dangling continuation start
    f << "\n";
  }
  CHECK_THROWS_WITH_AS(ingest_corpus((dir / "bad.txt").string()), doctest::Contains("offset 3"),
                       std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("pack_sequences: padding, chunk counts, token conservation") {
  std::vector<std::vector<int32_t>> one_doc{{10, 11, 12, 13, 14, 15, 16, 17, 18, 19}};
  auto packed = pack_sequences(one_doc, 16);
  REQUIRE(packed.size() == 1);
  CHECK(packed[0].size() == 16);
  CHECK(std::count(packed[0].begin(), packed[0].end(), tok::kPad) == 5);  // 10 tokens + SEP

  // Exactly two full sequences: 2*seq_len tokens including separators.
  std::vector<std::vector<int32_t>> two{{10, 11, 12, 13, 14, 15, 16}, {20, 21, 22, 23, 24, 25, 26}};
  auto packed2 = pack_sequences(two, 8);
  REQUIRE(packed2.size() == 2);
  for (const auto& s : packed2)
    CHECK(std::count(s.begin(), s.end(), tok::kPad) == 0);

  Rng rng(3);
  std::vector<std::vector<int32_t>> docs;
  int64_t input_tokens = 0;
  for (int i = 0; i < 7; ++i) {
    std::vector<int32_t> d;
    const int64_t len = 1 + rng.uniform_int(40);
    for (int64_t j = 0; j < len; ++j) d.push_back(static_cast<int32_t>(5 + rng.uniform_int(100)));
    input_tokens += len;
    docs.push_back(std::move(d));
  }
  auto packed3 = pack_sequences(docs, 16);
  int64_t non_pad = 0;
  for (const auto& s : packed3)
    for (int32_t id : s)
      if (id != tok::kPad) ++non_pad;
  CHECK(non_pad == input_tokens + 7);  // one separator per document
}

TEST_CASE("mask_batch: extremes and concentration") {
  PretrainConfig cfg;
  cfg.mask_rate = 0.0;
  Rng rng(5);
  std::vector<std::vector<int32_t>> batch{{5, 6, 7, tok::kSep, tok::kPad}};
  auto none = mask_batch(batch, cfg, 100, rng);
  CHECK(none.positions.empty());
  CHECK(none.input_ids == batch[0]);
  for (int32_t l : none.labels) CHECK(l == -1);

  cfg.mask_rate = 1.0;
  cfg.mask_frac = 1.0;
  cfg.random_frac = 0.0;
  cfg.keep_frac = 0.0;
  auto full = mask_batch(batch, cfg, 100, rng);
  CHECK(full.positions.size() == 3);
  CHECK(full.input_ids[0] == tok::kMask);
  CHECK(full.input_ids[1] == tok::kMask);
  CHECK(full.input_ids[2] == tok::kMask);
  CHECK(full.input_ids[3] == tok::kSep);  // specials untouched
  CHECK(full.input_ids[4] == tok::kPad);
  CHECK(full.labels[0] == 5);

  cfg = PretrainConfig{};
  cfg.mask_rate = 0.15;
  std::vector<std::vector<int32_t>> big(100, std::vector<int32_t>(1000, 7));
  Rng rng2(11);
  auto sel = mask_batch(big, cfg, 100, rng2);
  const double frac = static_cast<double>(sel.positions.size()) / 100000.0;
  CHECK(frac > 0.14);
  CHECK(frac < 0.16);

  // Label conservation: every label slot is ignore or the pre-mask token.
  for (int64_t i = 0; i < 100000; ++i)
    CHECK((sel.labels[static_cast<size_t>(i)] == -1 || sel.labels[static_cast<size_t>(i)] == 7));
}

TEST_CASE("select_mask_token_index is the argmax with first-wins ties") {
  CHECK(select_mask_token_index({0.1, 0.7, 0.2}) == 1);
  CHECK(select_mask_token_index({0.5, 0.5}) == 0);
  mlsm::LatentTarget onehot(10, 0.0);
  onehot[7] = 1.0;
  CHECK(select_mask_token_index(onehot) == 7);
}

TEST_CASE("pretrain: empty corpus is an error") {
  auto tokenizer = toy_tokenizer();
  Rng rng(1);
  model::Model m = model::make_model(toy_config(tokenizer, model::ResidualMode::Standard), rng);
  model::add_mlm_head(m, rng);
  Corpus empty;
  PretrainJob job;
  job.cfg = toy_pretrain_config(Objective::MlmStandard);
  CHECK_THROWS_WITH_AS(pretrain(m, tokenizer, empty, job), "no training data",
                       std::runtime_error);
}

TEST_CASE("pretrain: loss decreases and trajectories are seed-deterministic") {
  auto tokenizer = toy_tokenizer();
  auto corpus = toy_corpus();

  auto run = [&]() {
    Rng rng(2);
    model::Model m = model::make_model(toy_config(tokenizer, model::ResidualMode::Standard), rng);
    model::add_mlm_head(m, rng);
    PretrainJob job;
    job.cfg = toy_pretrain_config(Objective::MlmStandard);
    job.cfg.epochs = 6;
    return pretrain(m, tokenizer, corpus, job);
  };
  auto r1 = run();
  auto r2 = run();
  REQUIRE(!r1.step_losses.empty());
  CHECK(r1.step_losses == r2.step_losses);  // bit-identical trajectory

  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 3; ++i) head += r1.step_losses[static_cast<size_t>(i)];
  for (int i = 0; i < 3; ++i) tail += r1.step_losses[r1.step_losses.size() - 1 - static_cast<size_t>(i)];
  CHECK(tail < head);
}

TEST_CASE("pretrain: elc objective trains the layer weights") {
  auto tokenizer = toy_tokenizer();
  auto corpus = toy_corpus();
  Rng rng(3);
  model::Model m = model::make_model(toy_config(tokenizer, model::ResidualMode::Elc), rng);
  model::add_mlm_head(m, rng);
  const Tensor alpha_before = m.params.at(model::kElcAlphaName);
  PretrainJob job;
  job.cfg = toy_pretrain_config(Objective::MlmElc);
  auto res = pretrain(m, tokenizer, corpus, job);
  CHECK(!res.step_losses.empty());
  const Tensor& alpha_after = m.params.at(model::kElcAlphaName);
  bool moved = false;
  for (int64_t r = 0; r < alpha_after.rows(); ++r)
    for (int64_t c = 0; c <= r; ++c)
      if (alpha_after.at(r, c) != alpha_before.at(r, c)) moved = true;
  CHECK(moved);
  // Padded (invalid) logits receive no gradient and never move.
  for (int64_t r = 0; r < alpha_after.rows(); ++r)
    for (int64_t c = r + 1; c < alpha_after.cols(); ++c)
      CHECK(alpha_after.at(r, c) == alpha_before.at(r, c));
}

TEST_CASE("pretrain: checkpoint schedule and resume reproduce straight-through training") {
  auto tokenizer = toy_tokenizer();
  auto corpus = toy_corpus();

  auto fresh_model = [&]() {
    Rng rng(4);
    model::Model m = model::make_model(toy_config(tokenizer, model::ResidualMode::Standard), rng);
    model::add_mlm_head(m, rng);
    return m;
  };

  PretrainConfig cfg = toy_pretrain_config(Objective::MlmStandard);
  cfg.epochs = 4;
  cfg.checkpoint_epochs = {2};

  // Straight through.
  auto dir_a = tmp_dir("babylm_train_a");
  model::Model ma = fresh_model();
  PretrainJob job_a;
  job_a.cfg = cfg;
  job_a.out_dir = dir_a.string();
  auto ra = pretrain(ma, tokenizer, corpus, job_a);

  // Stop after epoch 2, reload, continue.
  auto dir_b = tmp_dir("babylm_train_b");
  model::Model mb = fresh_model();
  PretrainJob job_b1;
  job_b1.cfg = cfg;
  job_b1.out_dir = dir_b.string();
  job_b1.stop_after_epoch = 2;
  auto rb1 = pretrain(mb, tokenizer, corpus, job_b1);

  model::Model mb2 = model::load_checkpoint((dir_b / "model.ckpt").string());
  TrainState st = load_train_state((dir_b / "train_state.bin").string());
  PretrainJob job_b2;
  job_b2.cfg = cfg;
  job_b2.out_dir = dir_b.string();
  job_b2.resume = st;
  auto rb2 = pretrain(mb2, tokenizer, corpus, job_b2);

  std::vector<double> joined = rb1.step_losses;
  joined.insert(joined.end(), rb2.step_losses.begin(), rb2.step_losses.end());
  REQUIRE(joined.size() == ra.step_losses.size());
  for (size_t i = 0; i < joined.size(); ++i)
    CHECK(std::abs(joined[i] - ra.step_losses[i]) <= 1e-6);

  for (const auto& [name, t] : ma.params.params) {
    const Tensor& other = mb2.params.at(name);
    for (size_t i = 0; i < t.data.size(); ++i)
      CHECK(std::abs(t.data[i] - other.data[i]) <= 1e-6);
  }

  CHECK(std::filesystem::exists(dir_a / "checkpoint_epoch2.ckpt"));
  CHECK(std::filesystem::exists(dir_a / "checkpoint_epoch4.ckpt"));  // final epoch implied
  CHECK(std::filesystem::exists(dir_a / "loss_log.tsv"));
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("pretrain aborts on non-finite loss keeping earlier checkpoints") {
  auto tokenizer = toy_tokenizer();
  auto corpus = toy_corpus();
  Rng rng(6);
  model::Model m = model::make_model(toy_config(tokenizer, model::ResidualMode::Standard), rng);
  model::add_mlm_head(m, rng);

  auto dir = tmp_dir("babylm_train_nan");
  PretrainJob warm;
  warm.cfg = toy_pretrain_config(Objective::MlmStandard);
  warm.cfg.epochs = 2;
  warm.cfg.checkpoint_epochs = {1};
  warm.out_dir = dir.string();
  warm.stop_after_epoch = 1;
  pretrain(m, tokenizer, corpus, warm);
  REQUIRE(std::filesystem::exists(dir / "checkpoint_epoch1.ckpt"));

  // Poison the head bias (touched by every step) and resume; it must abort.
  m.params.at("head.mlm.b").data[0] = std::nanf("");
  TrainState st = load_train_state((dir / "train_state.bin").string());
  PretrainJob cont;
  cont.cfg = warm.cfg;
  cont.out_dir = dir.string();
  cont.resume = st;
  CHECK_THROWS_WITH_AS(pretrain(m, tokenizer, corpus, cont), doctest::Contains("aborted"),
                       std::runtime_error);
  CHECK(std::filesystem::exists(dir / "checkpoint_epoch1.ckpt"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("pretrain mlsm student: targets valid, [MASK-n] substitution, loss falls") {
  auto sentences = toy_sentences();
  auto base = tok::wordpiece_train(sentences, 160);
  const int64_t k = 8;

  // Teacher trains briefly on the standard objective.
  Rng trng(7);
  model::Model teacher = model::make_model(toy_config(base, model::ResidualMode::Standard), trng);
  model::add_mlm_head(teacher, trng);
  Corpus corpus = toy_corpus();
  PretrainJob tjob;
  tjob.cfg = toy_pretrain_config(Objective::MlmStandard);
  pretrain(teacher, base, corpus, tjob);

  // Dictionary from teacher hiddens at the middle layer.
  std::vector<std::vector<int32_t>> doc_tokens;
  for (const auto& s : sentences) doc_tokens.push_back(base.encode(s));
  auto seqs = pack_sequences(doc_tokens, 24);
  Rng crng(8);
  Tensor hiddens = mlsm::collect_hidden(teacher, seqs, 1, 200, crng);
  mlsm::normalize_rows(hiddens);
  Rng drng(9);
  auto learned = mlsm::dict_learn(hiddens, k, 0.05, 4, drng);
  learned.dict.teacher_layer = 1;

  // Student tokenizer adds the [MASK-n] family.
  tok::Tokenizer student_tok = base;
  tok::augment_mask_tokens(student_tok, k);

  Rng srng(10);
  model::ModelConfig scfg = toy_config(student_tok, model::ResidualMode::Standard);
  model::Model student = model::make_model(scfg, srng);
  model::add_latent_head(student, k, srng);

  PretrainJob sjob;
  sjob.cfg = toy_pretrain_config(Objective::MlsmStudent);
  sjob.cfg.epochs = 4;
  sjob.teacher = &teacher;
  sjob.dict = &learned.dict;
  auto res = pretrain(student, student_tok, corpus, sjob);

  REQUIRE(!res.step_losses.empty());
  CHECK(res.target_sum_min > 1.0 - 1e-6);
  CHECK(res.target_sum_max < 1.0 + 1e-6);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 3; ++i) head += res.step_losses[static_cast<size_t>(i)];
  for (int i = 0; i < 3; ++i) tail += res.step_losses[res.step_losses.size() - 1 - static_cast<size_t>(i)];
  CHECK(tail < head);

  // k mismatch between dictionary and vocab augmentation is rejected.
  tok::Tokenizer wrong_tok = base;
  tok::augment_mask_tokens(wrong_tok, k + 1);
  Rng wrng(11);
  model::ModelConfig wcfg = toy_config(wrong_tok, model::ResidualMode::Standard);
  model::Model wrong_student = model::make_model(wcfg, wrng);
  model::add_latent_head(wrong_student, k + 1, wrng);
  PretrainJob wjob = sjob;
  CHECK_THROWS_WITH_AS(pretrain(wrong_student, wrong_tok, corpus, wjob),
                       doctest::Contains("does not match"), std::runtime_error);
}

TEST_CASE("train state file round-trips bit-exactly") {
  TrainState st;
  st.epoch = 3;
  st.global_step = 41;
  st.loss_ema = 1.25;
  st.ema_init = true;
  st.rng_state = {1, 2, 3, 4};
  st.optim.lr = 5e-4;
  st.optim.step = 41;
  st.optim.m["w"] = Tensor({2, 2}, {1, 2, 3, 4});
  st.optim.v["w"] = Tensor({2, 2}, {5, 6, 7, 8});
  auto p1 = (std::filesystem::temp_directory_path() / "s1.state").string();
  auto p2 = (std::filesystem::temp_directory_path() / "s2.state").string();
  save_train_state(st, p1);
  auto loaded = load_train_state(p1);
  save_train_state(loaded, p2);
  CHECK(io::read_file(p1) == io::read_file(p2));
  CHECK(loaded.epoch == 3);
  CHECK(loaded.global_step == 41);
  CHECK(loaded.rng_state == st.rng_state);
  CHECK(loaded.optim.m.at("w").data == st.optim.m.at("w").data);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}
