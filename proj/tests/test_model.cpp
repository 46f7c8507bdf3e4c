#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "babylm/io.hpp"
#include "babylm/model.hpp"
#include "babylm/tokenizer.hpp"

using namespace babylm;
using namespace babylm::model;

namespace {

ModelConfig tiny_config(ResidualMode mode, int64_t layers = 2) {
  ModelConfig cfg;
  cfg.num_layers = layers;
  cfg.num_heads = 2;
  cfg.ff_hidden = 16;
  cfg.hidden_dim = 8;
  cfg.max_seq_len = 16;
  cfg.vocab_size = 16;
  cfg.residual_mode = mode;
  return cfg;
}

std::vector<int32_t> sample_ids(Rng& rng, int64_t len, int64_t vocab) {
  std::vector<int32_t> ids;
  for (int64_t i = 0; i < len; ++i)
    ids.push_back(static_cast<int32_t>(tok::kNumSpecials +
                                       rng.uniform_int(vocab - tok::kNumSpecials)));
  return ids;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig bad = tiny_config(ResidualMode::Standard);
  bad.hidden_dim = 9;  // not divisible by 2 heads
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
  bad = tiny_config(ResidualMode::Standard);
  bad.max_seq_len = 1;
  CHECK_THROWS_AS(bad.validate(), std::runtime_error);
}

TEST_CASE("embed: purity, pad handling, permutation behavior") {
  Rng rng(3);
  Model m = make_model(tiny_config(ResidualMode::Standard), rng);

  auto run_embed = [&](const std::vector<int32_t>& ids) {
    ag::Graph g;
    auto bp = bind_params(g, m.params);
    return g.value(embed(g, m.cfg, bp, ids));
  };

  const Tensor pad_vec = run_embed({tok::kPad});
  CHECK(pad_vec.all_finite());
  const Tensor pad_vec2 = run_embed({tok::kPad});
  CHECK(pad_vec.data == pad_vec2.data);

  const std::vector<int32_t> ids{5, 6, 7};
  const Tensor a = run_embed(ids);
  const Tensor b = run_embed(ids);
  CHECK(a.data == b.data);

  // Swapping two tokens moves the token contribution but keeps position terms:
  // row i of the swapped embedding equals LN(tok[ids[j]] + pos[i]).
  const std::vector<int32_t> swapped{7, 6, 5};
  const Tensor c = run_embed(swapped);
  const Tensor& te = m.params.at("emb.tok");
  const Tensor& pe = m.params.at("emb.pos");
  for (int64_t i : {0, 2}) {
    std::vector<float> row(8);
    for (int64_t j = 0; j < 8; ++j)
      row[static_cast<size_t>(j)] = te.at(swapped[static_cast<size_t>(i)], j) + pe.at(i, j);
    double mean = 0.0;
    for (float v : row) mean += v;
    mean /= 8;
    double var = 0.0;
    for (float v : row) var += (v - mean) * (v - mean);
    var /= 8;
    const double istd = 1.0 / std::sqrt(var + 1e-5);
    for (int64_t j = 0; j < 8; ++j)
      CHECK(c.at(i, j) == doctest::Approx((row[static_cast<size_t>(j)] - mean) * istd).epsilon(1e-4));
  }

  std::vector<int32_t> too_long(m.cfg.max_seq_len + 1, 5);
  ag::Graph g;
  auto bp = bind_params(g, m.params);
  CHECK_THROWS_AS(embed(g, m.cfg, bp, too_long), std::runtime_error);
}

TEST_CASE("elc_combine: identity, mean, one-hot, mismatch") {
  Rng rng(4);
  std::vector<Tensor> hs;
  for (int i = 0; i < 4; ++i) hs.push_back(Tensor::randn({3, 5}, rng, 1.0f));

  std::vector<float> one{1.0f};
  Tensor x1 = elc_combine({hs[0]}, one);
  CHECK(x1.data == hs[0].data);

  std::vector<float> half{0.5f, 0.5f};
  Tensor mean = elc_combine({hs[0], hs[1]}, half);
  for (size_t i = 0; i < mean.data.size(); ++i)
    CHECK(mean.data[i] == doctest::Approx(0.5f * (hs[0].data[i] + hs[1].data[i])).epsilon(1e-6));

  std::vector<float> onehot{0.0f, 0.0f, 0.0f, 1.0f};
  Tensor pick = elc_combine(hs, onehot);
  CHECK(pick.data == hs[3].data);

  std::vector<float> wrong{0.5f, 0.5f, 0.0f};
  CHECK_THROWS_AS(elc_combine({hs[0], hs[1]}, wrong), std::runtime_error);
}

TEST_CASE("encoder: elc with equal-weight rows reproduces standard mode") {
  Rng rng(11);
  Model elc = make_model(tiny_config(ResidualMode::Elc), rng);
  freeze_equal_weights(elc);

  Model std_m;
  std_m.cfg = elc.cfg;
  std_m.cfg.residual_mode = ResidualMode::Standard;
  for (const auto& [name, t] : elc.params.params)
    if (name != kElcAlphaName) std_m.params.add(name, t);

  Rng data_rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto ids = sample_ids(data_rng, 9, elc.cfg.vocab_size);
    auto ha = run_encoder(elc, ids);
    auto hb = run_encoder(std_m, ids);
    REQUIRE(ha.size() == hb.size());
    for (size_t l = 0; l < ha.size(); ++l)
      for (size_t i = 0; i < ha[l].data.size(); ++i)
        CHECK(std::abs(ha[l].data[i] - hb[l].data[i]) < 1e-5);
  }
}

TEST_CASE("encoder: zero-layer config yields only the embedding output") {
  Rng rng(2);
  Model m = make_model(tiny_config(ResidualMode::Standard, 0), rng);
  auto hs = run_encoder(m, std::vector<int32_t>{5, 6});
  CHECK(hs.size() == 1);
}

TEST_CASE("encoder: outputs at real positions are invariant to trailing padding") {
  Rng rng(13);
  for (ResidualMode mode : {ResidualMode::Standard, ResidualMode::Elc}) {
    Model m = make_model(tiny_config(mode), rng);
    const std::vector<int32_t> real{5, 9, 12, 7};
    std::vector<int32_t> padded = real;
    padded.resize(8, tok::kPad);
    auto h1 = run_encoder(m, real);
    auto h2 = run_encoder(m, padded);
    for (size_t l = 0; l < h1.size(); ++l)
      for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < m.cfg.hidden_dim; ++j)
          CHECK(std::abs(h1[l].at(i, j) - h2[l].at(i, j)) <= 1e-6);
  }
}

TEST_CASE("encoder: non-finite hidden state names the layer") {
  Rng rng(8);
  Model m = make_model(tiny_config(ResidualMode::Standard), rng);
  m.params.at("layer002.ffn.w2").data[0] = INFINITY;
  CHECK_THROWS_WITH_AS(run_encoder(m, std::vector<int32_t>{5, 6, 7}),
                       doctest::Contains("layer 2"), std::runtime_error);
}

TEST_CASE("mlm head: identity weights pick the hidden row") {
  Rng rng(21);
  ModelConfig cfg = tiny_config(ResidualMode::Standard);
  cfg.vocab_size = cfg.hidden_dim;  // identity head requires square weights
  Model m = make_model(cfg, rng);
  add_mlm_head(m, rng);
  Tensor& w = m.params.at("head.mlm.w");
  for (auto& v : w.data) v = 0.0f;
  for (int64_t i = 0; i < cfg.hidden_dim; ++i) w.at(i, i) = 1.0f;

  ag::Graph g;
  auto bp = bind_params(g, m.params);
  Tensor onehot = Tensor::zeros({2, cfg.hidden_dim});
  onehot.at(0, 3) = 1.0f;
  onehot.at(1, 5) = 1.0f;
  auto logits = mlm_head(g, bp, g.input(onehot), {0, 1});
  CHECK(g.value(logits).at(0, 3) == doctest::Approx(1.0f));
  CHECK(g.value(logits).at(1, 5) == doctest::Approx(1.0f));
  CHECK(g.value(logits).at(0, 4) == doctest::Approx(0.0f));

  CHECK_THROWS_WITH_AS(mlm_head(g, bp, g.input(onehot), {}), doctest::Contains("empty"),
                       std::runtime_error);
}

TEST_CASE("latent head: distributions and k mismatch") {
  Rng rng(22);
  Model m = make_model(tiny_config(ResidualMode::Standard), rng);
  add_latent_head(m, 6, rng);

  ag::Graph g;
  auto bp = bind_params(g, m.params);
  auto hs = encoder_forward(g, m.cfg, bp, std::vector<int32_t>{5, 6, 7, 8});
  auto dist = latent_head(g, bp, hs.last(), {1, 2}, 6);
  const Tensor& t = g.value(dist);
  for (int64_t r = 0; r < t.rows(); ++r) {
    double sum = 0.0;
    for (int64_t c = 0; c < t.cols(); ++c) {
      CHECK(t.at(r, c) >= 0.0f);
      sum += t.at(r, c);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_WITH_AS(latent_head(g, bp, hs.last(), {0}, 7), doctest::Contains("mismatch"),
                       std::runtime_error);

  // Uniform logits (zero weights and bias) give the uniform distribution.
  for (auto& v : m.params.at("head.latent.w").data) v = 0.0f;
  ag::Graph g2;
  auto bp2 = bind_params(g2, m.params);
  auto hs2 = encoder_forward(g2, m.cfg, bp2, std::vector<int32_t>{5, 6});
  auto dist2 = latent_head(g2, bp2, hs2.last(), {0}, 6);
  for (int64_t c = 0; c < 6; ++c)
    CHECK(g2.value(dist2).at(0, c) == doctest::Approx(1.0 / 6).epsilon(1e-6));
}

TEST_CASE("classification heads: shapes and bias-only logits on zero hidden") {
  Rng rng(23);
  Model m = make_model(tiny_config(ResidualMode::Standard), rng);
  add_token_cls_head(m, 3, rng);
  add_seq_cls_head(m, 2, rng);
  m.params.at("head.tokcls.b").data = {0.5f, -0.25f, 0.0f};
  m.params.at("head.seqcls.b").data = {1.0f, 2.0f};

  ag::Graph g;
  auto bp = bind_params(g, m.params);
  auto zeros = g.input(Tensor::zeros({4, m.cfg.hidden_dim}));
  auto tok_logits = token_cls_head(g, bp, zeros);
  CHECK(g.value(tok_logits).rows() == 4);
  CHECK(g.value(tok_logits).cols() == 3);
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(g.value(tok_logits).at(i, 0) == doctest::Approx(0.5f));
    CHECK(g.value(tok_logits).at(i, 1) == doctest::Approx(-0.25f));
  }
  auto seq_logits = seq_cls_head(g, bp, zeros);
  CHECK(g.value(seq_logits).rows() == 1);
  CHECK(g.value(seq_logits).cols() == 2);
  CHECK(g.value(seq_logits).at(0, 1) == doctest::Approx(2.0f));

  CHECK_THROWS_AS(add_token_cls_head(m, 1, rng), std::runtime_error);
}

TEST_CASE("full-model gradient check in both residual modes") {
  for (ResidualMode mode : {ResidualMode::Standard, ResidualMode::Elc}) {
    Rng rng(31);
    Model m = make_model(tiny_config(mode), rng);
    add_mlm_head(m, rng);
    Rng data_rng(7);
    const auto ids = sample_ids(data_rng, 6, m.cfg.vocab_size);
    const std::vector<int64_t> positions{1, 3};
    const std::vector<int64_t> targets{9, 11};

    auto build_loss = [&](ag::Graph& g, BoundParams& bp) {
      auto hs = encoder_forward(g, m.cfg, bp, ids);
      auto logits = mlm_head(g, bp, hs.last(), positions);
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
    auto res = grad_check(m.params, loss_fn, grad_fn, 2e-3, 6);
    INFO("mode ", mode == ResidualMode::Elc ? "elc" : "standard", " worst ", res.worst_param);
    CHECK(res.max_rel_err < 1e-3);
  }
}

TEST_CASE("effective layer weights: rows sum to one, shift invariance of argmax") {
  Rng rng(41);
  Model m = make_model(tiny_config(ResidualMode::Elc, 4), rng);
  Tensor& alpha = m.params.at(kElcAlphaName);
  ag::Graph g;
  for (int64_t r = 0; r < 4; ++r) {
    auto row = g.input(Tensor({1, r + 1}, std::vector<float>(
                                              alpha.data.begin() + r * 5,
                                              alpha.data.begin() + r * 5 + r + 1)));
    auto w = g.softmax_rows(row);
    double sum = 0.0;
    int64_t argmax = 0;
    for (int64_t j = 0; j <= r; ++j) {
      sum += g.value(w).data[static_cast<size_t>(j)];
      if (g.value(w).data[static_cast<size_t>(j)] > g.value(w).data[static_cast<size_t>(argmax)])
        argmax = j;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(argmax == r);  // init favors the immediately preceding output

    // Adding a constant to the raw logits leaves the argmax unchanged.
    std::vector<float> shifted(alpha.data.begin() + r * 5, alpha.data.begin() + r * 5 + r + 1);
    for (auto& v : shifted) v += 3.25f;
    auto w2 = g.softmax_rows(g.input(Tensor({1, r + 1}, shifted)));
    int64_t argmax2 = 0;
    for (int64_t j = 0; j <= r; ++j)
      if (g.value(w2).data[static_cast<size_t>(j)] > g.value(w2).data[static_cast<size_t>(argmax2)])
        argmax2 = j;
    CHECK(argmax2 == argmax);
  }
}

TEST_CASE("checkpoint: bit-exact round-trip and identical forward") {
  Rng rng(51);
  Model m = make_model(tiny_config(ResidualMode::Elc), rng);
  add_mlm_head(m, rng);
  const std::string p1 = (std::filesystem::temp_directory_path() / "m1.ckpt").string();
  const std::string p2 = (std::filesystem::temp_directory_path() / "m2.ckpt").string();
  save_checkpoint(m, p1);
  Model loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);
  CHECK(io::read_file(p1) == io::read_file(p2));

  const std::vector<int32_t> ids{5, 8, 9};
  auto h1 = run_encoder(m, ids);
  auto h2 = run_encoder(loaded, ids);
  for (size_t l = 0; l < h1.size(); ++l) CHECK(h1[l].data == h2[l].data);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}
