#include "babylm/model.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "babylm/io.hpp"
#include "babylm/tokenizer.hpp"

namespace babylm::model {

namespace {

std::string layer_prefix(int64_t layer) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "layer%03lld.", static_cast<long long>(layer));
  return buf;
}

constexpr float kLnEps = 1e-5f;
constexpr float kInitStd = 0.02f;
constexpr float kMaskedScore = -1e9f;

}  // namespace

void ModelConfig::validate() const {
  if (num_layers < 0) throw std::runtime_error("config: num_layers must be >= 0");
  if (num_heads < 1) throw std::runtime_error("config: num_heads must be >= 1");
  if (hidden_dim < 1 || ff_hidden < 1) throw std::runtime_error("config: dims must be positive");
  if (hidden_dim % num_heads != 0)
    throw std::runtime_error("config: hidden_dim must be divisible by num_heads");
  if (max_seq_len < 2) throw std::runtime_error("config: max_seq_len must be >= 2");
  if (vocab_size < 1) throw std::runtime_error("config: vocab_size must be positive");
}

Model make_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  const int64_t d = cfg.hidden_dim;
  auto& p = m.params;
  p.add("emb.tok", Tensor::randn({cfg.vocab_size, d}, rng, kInitStd));
  p.add("emb.pos", Tensor::randn({cfg.max_seq_len, d}, rng, kInitStd));
  p.add("emb.ln.g", Tensor::full({d}, 1.0f));
  p.add("emb.ln.b", Tensor::zeros({d}));
  for (int64_t l = 1; l <= cfg.num_layers; ++l) {
    const std::string pre = layer_prefix(l);
    p.add(pre + "attn.wq", Tensor::randn({d, d}, rng, kInitStd));
    p.add(pre + "attn.bq", Tensor::zeros({d}));
    p.add(pre + "attn.wk", Tensor::randn({d, d}, rng, kInitStd));
    p.add(pre + "attn.bk", Tensor::zeros({d}));
    p.add(pre + "attn.wv", Tensor::randn({d, d}, rng, kInitStd));
    p.add(pre + "attn.bv", Tensor::zeros({d}));
    p.add(pre + "attn.wo", Tensor::randn({d, d}, rng, kInitStd));
    p.add(pre + "attn.bo", Tensor::zeros({d}));
    p.add(pre + "ln1.g", Tensor::full({d}, 1.0f));
    p.add(pre + "ln1.b", Tensor::zeros({d}));
    p.add(pre + "ffn.w1", Tensor::randn({d, cfg.ff_hidden}, rng, kInitStd));
    p.add(pre + "ffn.b1", Tensor::zeros({cfg.ff_hidden}));
    p.add(pre + "ffn.w2", Tensor::randn({cfg.ff_hidden, d}, rng, kInitStd));
    p.add(pre + "ffn.b2", Tensor::zeros({d}));
    p.add(pre + "ln2.g", Tensor::full({d}, 1.0f));
    p.add(pre + "ln2.b", Tensor::zeros({d}));
  }
  if (cfg.residual_mode == ResidualMode::Elc && cfg.num_layers > 0) {
    // Row r feeds layer r+1; init strongly favors the immediately preceding
    // output h_r. Padded columns (j > r) stay zero and are never read.
    Tensor alpha = Tensor::zeros({cfg.num_layers, cfg.num_layers + 1});
    for (int64_t r = 0; r < cfg.num_layers; ++r) alpha.at(r, r) = kElcPrevLayerLogit;
    p.add(kElcAlphaName, std::move(alpha));
  }
  return m;
}

void add_mlm_head(Model& m, Rng& rng) {
  if (m.params.has("head.mlm.w")) return;
  m.params.add("head.mlm.w", Tensor::randn({m.cfg.vocab_size, m.cfg.hidden_dim}, rng, kInitStd));
  m.params.add("head.mlm.b", Tensor::zeros({m.cfg.vocab_size}));
}

void add_latent_head(Model& m, int64_t k, Rng& rng) {
  if (k < 2) throw std::runtime_error("latent head: k must be >= 2");
  if (m.params.has("head.latent.w")) return;
  m.params.add("head.latent.w", Tensor::randn({k, m.cfg.hidden_dim}, rng, kInitStd));
  m.params.add("head.latent.b", Tensor::zeros({k}));
}

void add_token_cls_head(Model& m, int64_t num_labels, Rng& rng) {
  if (num_labels < 2) throw std::runtime_error("token cls head: label count must be >= 2");
  if (m.params.has("head.tokcls.w")) return;
  m.params.add("head.tokcls.w", Tensor::randn({num_labels, m.cfg.hidden_dim}, rng, kInitStd));
  m.params.add("head.tokcls.b", Tensor::zeros({num_labels}));
}

void add_seq_cls_head(Model& m, int64_t num_labels, Rng& rng) {
  if (num_labels < 2) throw std::runtime_error("seq cls head: label count must be >= 2");
  if (m.params.has("head.seqcls.w")) return;
  m.params.add("head.seqcls.w", Tensor::randn({num_labels, m.cfg.hidden_dim}, rng, kInitStd));
  m.params.add("head.seqcls.b", Tensor::zeros({num_labels}));
}

void freeze_equal_weights(Model& m) {
  if (!m.params.has(kElcAlphaName))
    throw std::runtime_error("freeze_equal_weights: model has no layer weights");
  Tensor& alpha = m.params.at(kElcAlphaName);
  for (auto& v : alpha.data) v = 0.0f;
}

ag::Var embed(ag::Graph& g, const ModelConfig& cfg, const BoundParams& bp,
              std::span<const int32_t> ids) {
  if (ids.empty()) throw std::runtime_error("embed: empty sequence");
  if (static_cast<int64_t>(ids.size()) > cfg.max_seq_len)
    throw std::runtime_error("embed: sequence length " + std::to_string(ids.size()) +
                             " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  std::vector<int64_t> tok_idx, pos_idx;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= cfg.vocab_size)
      throw std::runtime_error("embed: token id out of range");
    tok_idx.push_back(ids[i]);
    pos_idx.push_back(static_cast<int64_t>(i));
  }
  auto te = g.gather_rows(bp.at("emb.tok"), tok_idx);
  auto pe = g.gather_rows(bp.at("emb.pos"), pos_idx);
  return g.layer_norm(g.add(te, pe), bp.at("emb.ln.g"), bp.at("emb.ln.b"), kLnEps);
}

Tensor elc_combine(const std::vector<Tensor>& hs, std::span<const float> row) {
  if (hs.empty() || row.size() != hs.size())
    throw std::runtime_error("elc_combine: weight count does not match outputs");
  Tensor out = Tensor::zeros(hs[0].shape);
  for (size_t j = 0; j < hs.size(); ++j) {
    if (!hs[j].same_shape(out)) throw std::runtime_error("elc_combine: shape mismatch");
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += row[j] * hs[j].data[i];
  }
  return out;
}

namespace {

ag::Var attention_block(ag::Graph& g, const ModelConfig& cfg, const BoundParams& bp,
                        const std::string& pre, ag::Var x, ag::Var key_mask) {
  const int64_t d = cfg.hidden_dim;
  const int64_t dh = d / cfg.num_heads;
  auto q = g.add_bias(g.matmul(x, bp.at(pre + "attn.wq")), bp.at(pre + "attn.bq"));
  auto k = g.add_bias(g.matmul(x, bp.at(pre + "attn.wk")), bp.at(pre + "attn.bk"));
  auto v = g.add_bias(g.matmul(x, bp.at(pre + "attn.wv")), bp.at(pre + "attn.bv"));
  std::vector<ag::Var> ctx;
  for (int64_t h = 0; h < cfg.num_heads; ++h) {
    auto qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    auto scores = g.scale(g.matmul_nt(qh, kh), 1.0f / std::sqrt(static_cast<float>(dh)));
    auto probs = g.softmax_rows(g.add_bias(scores, key_mask));
    ctx.push_back(g.matmul(probs, vh));
  }
  auto merged = cfg.num_heads == 1 ? ctx[0] : g.concat_cols(ctx);
  return g.add_bias(g.matmul(merged, bp.at(pre + "attn.wo")), bp.at(pre + "attn.bo"));
}

}  // namespace

EncoderStates encoder_forward(ag::Graph& g, const ModelConfig& cfg, const BoundParams& bp,
                              std::span<const int32_t> ids) {
  const int64_t s = static_cast<int64_t>(ids.size());
  EncoderStates out;
  out.h.push_back(embed(g, cfg, bp, ids));

  Tensor mask = Tensor::zeros({s});
  for (int64_t i = 0; i < s; ++i)
    if (ids[static_cast<size_t>(i)] == tok::kPad) mask.data[static_cast<size_t>(i)] = kMaskedScore;
  auto key_mask = g.input(std::move(mask));

  const bool elc = cfg.residual_mode == ResidualMode::Elc;
  ag::Var alpha;
  if (elc && cfg.num_layers > 0) alpha = bp.at(kElcAlphaName);

  for (int64_t l = 1; l <= cfg.num_layers; ++l) {
    ag::Var weights;
    if (elc) {
      auto row = g.gather_rows(alpha, {l - 1});
      weights = g.softmax_rows(g.slice_cols(row, 0, l));
    } else {
      weights = g.input(Tensor::full({1, l}, 1.0f / static_cast<float>(l)));
    }
    std::vector<ag::Var> preceding(out.h.begin(), out.h.end());
    auto x = g.weighted_sum(preceding, weights);

    const std::string pre = layer_prefix(l);
    auto attn = attention_block(g, cfg, bp, pre, x, key_mask);
    auto a = g.layer_norm(g.add(x, attn), bp.at(pre + "ln1.g"), bp.at(pre + "ln1.b"), kLnEps);
    auto f1 = g.gelu(g.add_bias(g.matmul(a, bp.at(pre + "ffn.w1")), bp.at(pre + "ffn.b1")));
    auto f2 = g.add_bias(g.matmul(f1, bp.at(pre + "ffn.w2")), bp.at(pre + "ffn.b2"));
    auto h = g.layer_norm(g.add(a, f2), bp.at(pre + "ln2.g"), bp.at(pre + "ln2.b"), kLnEps);
    if (!g.value(h).all_finite())
      throw std::runtime_error("non-finite hidden state at layer " + std::to_string(l));
    out.h.push_back(h);
  }
  return out;
}

ag::Var mlm_head(ag::Graph& g, const BoundParams& bp, ag::Var h_last,
                 const std::vector<int64_t>& positions) {
  if (positions.empty()) throw std::runtime_error("mlm_head: empty positions");
  auto picked = g.gather_rows(h_last, positions);
  return g.add_bias(g.matmul_nt(picked, bp.at("head.mlm.w")), bp.at("head.mlm.b"));
}

ag::Var latent_head(ag::Graph& g, const BoundParams& bp, ag::Var h_last,
                    const std::vector<int64_t>& positions, int64_t k) {
  if (positions.empty()) throw std::runtime_error("latent_head: empty positions");
  const auto& w = g.value(bp.at("head.latent.w"));
  if (w.rows() != k)
    throw std::runtime_error("latent_head: k mismatch, head has " + std::to_string(w.rows()) +
                             " categories but " + std::to_string(k) + " requested");
  auto picked = g.gather_rows(h_last, positions);
  auto logits = g.add_bias(g.matmul_nt(picked, bp.at("head.latent.w")), bp.at("head.latent.b"));
  return g.softmax_rows(logits);
}

ag::Var token_cls_head(ag::Graph& g, const BoundParams& bp, ag::Var h_last) {
  return g.add_bias(g.matmul_nt(h_last, bp.at("head.tokcls.w")), bp.at("head.tokcls.b"));
}

ag::Var seq_cls_head(ag::Graph& g, const BoundParams& bp, ag::Var h_last) {
  auto first = g.gather_rows(h_last, {0});
  return g.add_bias(g.matmul_nt(first, bp.at("head.seqcls.w")), bp.at("head.seqcls.b"));
}

std::vector<Tensor> run_encoder(const Model& m, std::span<const int32_t> ids) {
  ag::Graph g;
  BoundParams bp;
  for (const auto& [name, t] : m.params.params) bp.vars[name] = g.input(t);
  auto states = encoder_forward(g, m.cfg, bp, ids);
  std::vector<Tensor> out;
  out.reserve(states.h.size());
  for (auto v : states.h) out.push_back(g.value(v));
  return out;
}

// ---------------------------------------------------------------- checkpoint

void save_checkpoint(const Model& m, const std::string& path) {
  std::ostringstream os(std::ios::binary);
  os.write("CKPT v1", 7);
  io::write_u32(os, static_cast<uint32_t>(m.cfg.num_layers));
  io::write_u32(os, static_cast<uint32_t>(m.cfg.num_heads));
  io::write_u32(os, static_cast<uint32_t>(m.cfg.ff_hidden));
  io::write_u32(os, static_cast<uint32_t>(m.cfg.hidden_dim));
  io::write_u32(os, static_cast<uint32_t>(m.cfg.max_seq_len));
  io::write_u32(os, static_cast<uint32_t>(m.cfg.vocab_size));
  io::write_u32(os, m.cfg.residual_mode == ResidualMode::Elc ? 1u : 0u);
  io::write_u32(os, static_cast<uint32_t>(m.params.params.size()));
  for (const auto& [name, t] : m.params.params) {  // std::map: sorted-name order
    io::write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::write_u32(os, static_cast<uint32_t>(t.shape.size()));
    for (int64_t dim : t.shape) io::write_u32(os, static_cast<uint32_t>(dim));
    io::write_f32_array(os, t.data.data(), t.data.size());
  }
  const std::string payload = os.str();
  io::write_file_atomic_binary(path, payload.data(), payload.size());
}

Model load_checkpoint(const std::string& path) {
  const std::string content = io::read_file(path);
  std::istringstream is(content, std::ios::binary);
  char magic[7];
  is.read(magic, 7);
  if (!is || std::memcmp(magic, "CKPT v1", 7) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  Model m;
  m.cfg.num_layers = io::read_u32(is);
  m.cfg.num_heads = io::read_u32(is);
  m.cfg.ff_hidden = io::read_u32(is);
  m.cfg.hidden_dim = io::read_u32(is);
  m.cfg.max_seq_len = io::read_u32(is);
  m.cfg.vocab_size = io::read_u32(is);
  m.cfg.residual_mode = io::read_u32(is) == 1u ? ResidualMode::Elc : ResidualMode::Standard;
  const uint32_t count = io::read_u32(is);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = io::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t ndim = io::read_u32(is);
    std::vector<int64_t> shape(ndim);
    for (auto& dim : shape) dim = io::read_u32(is);
    Tensor t = Tensor::zeros(shape);
    io::read_f32_array(is, t.data.data(), t.data.size());
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    m.params.add(name, std::move(t));
  }
  return m;
}

}  // namespace babylm::model
