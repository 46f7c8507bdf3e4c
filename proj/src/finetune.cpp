#include "babylm/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "babylm/io.hpp"
#include "babylm/optim.hpp"

namespace babylm::eval {

std::string task_name(Task t) {
  switch (t) {
    case Task::Pos: return "pos";
    case Task::Ner: return "ner";
    case Task::Ntc: return "ntc";
  }
  throw std::runtime_error("unknown task");
}

std::string task_metric(Task t) { return t == Task::Pos ? "accuracy" : "weighted_f1"; }

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

std::vector<std::string> sorted_unique(std::set<std::string> s) { return {s.begin(), s.end()}; }

}  // namespace

TokenTaskDataset conll_from_text(const std::string& text, bool validate_bio) {
  TokenTaskDataset ds;
  std::set<std::string> labels;
  TokenSentence current;
  const auto lines = split_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.empty()) {
      if (!current.tokens.empty()) {
        ds.sentences.push_back(std::move(current));
        current = {};
      }
      continue;
    }
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw std::runtime_error("conll line " + std::to_string(i + 1) +
                               ": expected token<TAB>label");
    current.tokens.push_back(line.substr(0, tab));
    current.labels.push_back(line.substr(tab + 1));
    labels.insert(current.labels.back());
  }
  if (!current.tokens.empty()) ds.sentences.push_back(std::move(current));
  ds.label_set = sorted_unique(std::move(labels));

  if (validate_bio) {
    for (size_t s = 0; s < ds.sentences.size(); ++s) {
      const auto& sent = ds.sentences[s];
      for (size_t t = 0; t < sent.labels.size(); ++t) {
        const std::string& lab = sent.labels[t];
        if (lab.rfind("I-", 0) != 0) continue;
        const std::string entity = lab.substr(2);
        const std::string prev = t == 0 ? std::string() : sent.labels[t - 1];
        const bool ok = prev == "B-" + entity || prev == "I-" + entity;
        if (!ok)
          ds.bio_violations.push_back("sentence " + std::to_string(s + 1) + " token " +
                                      std::to_string(t + 1) + ": " + lab + " follows '" +
                                      prev + "'");
      }
    }
  }
  return ds;
}

TokenTaskDataset load_conll(const std::string& path, bool validate_bio) {
  return conll_from_text(io::read_file(path), validate_bio);
}

SeqTaskDataset tsv_classification_from_text(const std::string& text) {
  SeqTaskDataset ds;
  std::set<std::string> labels;
  const auto lines = split_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw std::runtime_error("tsv line " + std::to_string(i + 1) + ": expected label<TAB>text");
    std::string label = line.substr(0, tab);
    std::string body = line.substr(tab + 1);
    if (body.empty())
      throw std::runtime_error("tsv line " + std::to_string(i + 1) + ": empty text");
    labels.insert(label);
    ds.examples.push_back({std::move(label), std::move(body)});
  }
  ds.label_set = sorted_unique(std::move(labels));
  return ds;
}

SeqTaskDataset load_tsv_classification(const std::string& path) {
  return tsv_classification_from_text(io::read_file(path));
}

std::vector<int64_t> align_labels(const std::vector<int64_t>& word_index, int64_t num_words,
                                  const std::vector<int64_t>& word_label_ids) {
  if (static_cast<int64_t>(word_label_ids.size()) != num_words)
    throw std::runtime_error("align_labels: label count does not match word count");
  std::vector<int64_t> out(word_index.size(), -1);
  int64_t prev = -1;
  std::vector<bool> seen(static_cast<size_t>(num_words), false);
  for (size_t i = 0; i < word_index.size(); ++i) {
    const int64_t w = word_index[i];
    if (w < 0 || w >= num_words) throw std::runtime_error("align_labels: word index out of range");
    if (w != prev) {
      out[i] = word_label_ids[static_cast<size_t>(w)];
      seen[static_cast<size_t>(w)] = true;
      prev = w;
    }
  }
  for (int64_t w = 0; w < num_words; ++w)
    if (!seen[static_cast<size_t>(w)])
      throw std::runtime_error("align_labels: mapping gap, word " + std::to_string(w) +
                               " has no subwords");
  return out;
}

double accuracy(std::span<const std::string> pred, std::span<const std::string> gold) {
  if (pred.size() != gold.size()) throw std::runtime_error("accuracy: length mismatch");
  if (gold.empty()) throw std::runtime_error("accuracy: zero counted positions");
  int64_t correct = 0;
  for (size_t i = 0; i < gold.size(); ++i)
    if (pred[i] == gold[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

double weighted_f1(std::span<const std::string> pred, std::span<const std::string> gold,
                   const std::vector<std::string>& label_set) {
  if (pred.size() != gold.size()) throw std::runtime_error("weighted_f1: length mismatch");
  if (gold.empty()) throw std::runtime_error("weighted_f1: empty input");
  double out = 0.0;
  const double n = static_cast<double>(gold.size());
  for (const std::string& cls : label_set) {
    int64_t tp = 0, fp = 0, fn = 0, support = 0;
    for (size_t i = 0; i < gold.size(); ++i) {
      const bool g = gold[i] == cls;
      const bool p = pred[i] == cls;
      if (g) ++support;
      if (p && g) ++tp;
      if (p && !g) ++fp;
      if (!p && g) ++fn;
    }
    if (support == 0) continue;
    const double precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    out += (static_cast<double>(support) / n) * f1;
  }
  return out;
}

Aggregate aggregate_runs(std::span<const double> scores) {
  if (scores.empty()) throw std::runtime_error("aggregate_runs: no scores");
  Aggregate a;
  for (double s : scores) a.mean += s;
  a.mean /= static_cast<double>(scores.size());
  if (scores.size() == 1) {
    a.single_run = true;
    return a;
  }
  double sq = 0.0;
  for (double s : scores) sq += (s - a.mean) * (s - a.mean);
  a.std_dev = std::sqrt(sq / static_cast<double>(scores.size() - 1));
  return a;
}

SplitIndices split_indices(size_t n) {
  SplitIndices out;
  for (size_t i = 0; i < n; ++i) {
    uint64_t z = static_cast<uint64_t>(i) + 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    const uint64_t bucket = z % 10;
    if (bucket < 8) {
      out.train.push_back(i);
    } else if (bucket == 8) {
      out.dev.push_back(i);
    } else {
      out.test.push_back(i);
    }
  }
  return out;
}

// ------------------------------------------------------------- finetuning

namespace {

struct Encoded {
  std::vector<int32_t> ids;
  std::vector<int64_t> positions;  // labeled positions
  std::vector<int64_t> targets;    // label ids at those positions
};

std::map<std::string, int64_t> label_index(const std::vector<std::string>& label_set) {
  std::map<std::string, int64_t> out;
  for (size_t i = 0; i < label_set.size(); ++i) out[label_set[i]] = static_cast<int64_t>(i);
  return out;
}

Encoded encode_token_sentence(const tok::Tokenizer& tokenizer, const TokenSentence& sent,
                              const std::map<std::string, int64_t>& to_id, int64_t max_seq_len) {
  std::vector<int64_t> word_index;
  auto sub_ids = tokenizer.encode_words(sent.tokens, &word_index);
  std::vector<int64_t> word_labels;
  word_labels.reserve(sent.labels.size());
  for (const auto& lab : sent.labels) word_labels.push_back(to_id.at(lab));

  const size_t budget = static_cast<size_t>(max_seq_len - 2);
  int64_t kept_words = static_cast<int64_t>(sent.tokens.size());
  if (sub_ids.size() > budget) {
    // Truncate on a word boundary so alignment has no gaps: the subword at
    // the cut must start a new word.
    size_t cut = budget;
    while (cut > 0 && word_index[cut] == word_index[cut - 1]) --cut;
    sub_ids.resize(cut);
    word_index.resize(cut);
    kept_words = word_index.empty() ? 0 : word_index.back() + 1;
  }
  if (kept_words == 0) throw std::runtime_error("sentence too long to encode any word");
  word_labels.resize(static_cast<size_t>(kept_words));
  auto aligned = align_labels(word_index, kept_words, word_labels);

  Encoded e;
  e.ids.push_back(tok::kCls);
  for (int32_t id : sub_ids) e.ids.push_back(id);
  e.ids.push_back(tok::kSep);
  for (size_t i = 0; i < aligned.size(); ++i) {
    if (aligned[i] < 0) continue;
    e.positions.push_back(static_cast<int64_t>(i) + 1);  // offset for [CLS]
    e.targets.push_back(aligned[i]);
  }
  return e;
}

Encoded encode_seq_example(const tok::Tokenizer& tokenizer, const SeqExample& ex,
                           const std::map<std::string, int64_t>& to_id, int64_t max_seq_len) {
  auto sub_ids = tokenizer.encode(ex.text);
  const size_t budget = static_cast<size_t>(max_seq_len - 2);
  if (sub_ids.size() > budget) sub_ids.resize(budget);
  Encoded e;
  e.ids.push_back(tok::kCls);
  for (int32_t id : sub_ids) e.ids.push_back(id);
  e.ids.push_back(tok::kSep);
  e.positions.push_back(0);
  e.targets.push_back(to_id.at(ex.label));
  return e;
}

// Shared seed loop: trains a fresh head and returns the test score.
double train_and_score(const model::Model& pretrained, uint64_t seed, bool token_level,
                       int64_t num_labels, const std::vector<Encoded>& train,
                       const std::vector<Encoded>& test,
                       const std::vector<std::string>& label_set, Task task,
                       const FinetuneOptions& opts, model::Model* keep_model) {
  model::Model m;
  m.cfg = pretrained.cfg;
  m.params = pretrained.params;
  const char* wname = token_level ? "head.tokcls.w" : "head.seqcls.w";
  const char* bname = token_level ? "head.tokcls.b" : "head.seqcls.b";
  m.params.remove(wname);
  m.params.remove(bname);
  Rng head_rng(seed);
  if (token_level) {
    model::add_token_cls_head(m, num_labels, head_rng);
  } else {
    model::add_seq_cls_head(m, num_labels, head_rng);
  }

  OptimState opt;
  opt.lr = opts.lr;
  opt.weight_decay = opts.weight_decay;
  const int64_t n = static_cast<int64_t>(train.size());
  const int64_t batches = (n + opts.batch_size - 1) / opts.batch_size;
  const int64_t total_steps = opts.epochs * batches;
  int64_t step = 0;

  for (int64_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(seed * 1000003ull + static_cast<uint64_t>(epoch));
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);

    for (int64_t b0 = 0; b0 < n; b0 += opts.batch_size) {
      ag::Graph g;
      auto bp = bind_params(g, m.params);
      ag::Var total;
      int64_t total_positions = 0;
      for (int64_t i = b0; i < std::min(n, b0 + opts.batch_size); ++i) {
        const Encoded& e = train[static_cast<size_t>(order[static_cast<size_t>(i)])];
        if (e.positions.empty()) continue;
        auto hs = model::encoder_forward(g, m.cfg, bp, e.ids);
        ag::Var logits = token_level ? model::token_cls_head(g, bp, hs.last())
                                     : model::seq_cls_head(g, bp, hs.last());
        auto picked = token_level ? g.gather_rows(logits, e.positions) : logits;
        auto piece = g.scale(g.cross_entropy_mean(picked, e.targets),
                             static_cast<float>(e.targets.size()));
        total = total.valid() ? g.add(total, piece) : piece;
        total_positions += static_cast<int64_t>(e.targets.size());
      }
      if (total_positions == 0) continue;
      auto loss = g.scale(total, 1.0f / static_cast<float>(total_positions));
      m.params.zero_grads();
      g.backward(loss);
      accumulate_grads(g, bp, m.params);
      clip_global_norm(m.params, opts.grad_clip);
      opt.lr = lr_schedule(step, total_steps, opts.lr, opts.warmup_fraction);
      adamw_step(m.params, opt);
      ++step;
    }
  }

  // Score on the held-out set.
  std::vector<std::string> pred, gold;
  for (const Encoded& e : test) {
    ag::Graph g;
    BoundParams bp;
    for (const auto& [name, t] : m.params.params) bp.vars[name] = g.input(t);
    auto hs = model::encoder_forward(g, m.cfg, bp, e.ids);
    ag::Var logits = token_level ? model::token_cls_head(g, bp, hs.last())
                                 : model::seq_cls_head(g, bp, hs.last());
    const Tensor& lt = g.value(logits);
    for (size_t p = 0; p < e.positions.size(); ++p) {
      const int64_t row = token_level ? e.positions[p] : 0;
      int64_t best = 0;
      for (int64_t c = 1; c < lt.cols(); ++c)
        if (lt.at(row, c) > lt.at(row, best)) best = c;
      pred.push_back(label_set[static_cast<size_t>(best)]);
      gold.push_back(label_set[static_cast<size_t>(e.targets[p])]);
    }
  }
  if (keep_model) *keep_model = m;
  return task == Task::Pos ? accuracy(pred, gold) : weighted_f1(pred, gold, label_set);
}

void check_label_cover(const std::vector<std::string>& train_set,
                       const std::vector<std::string>& test_set) {
  for (const auto& lab : test_set)
    if (!std::binary_search(train_set.begin(), train_set.end(), lab))
      throw std::runtime_error("label set mismatch: test label '" + lab +
                               "' missing from training set");
}

EvalReport run_seeds(const model::Model& pretrained, bool token_level, int64_t num_labels,
                     const std::vector<Encoded>& train, const std::vector<Encoded>& test,
                     const std::vector<std::string>& label_set, Task task,
                     const FinetuneOptions& opts) {
  if (opts.seeds.empty()) throw std::runtime_error("finetune: no seeds");
  EvalReport report;
  report.task = task_name(task);
  report.metric = task_metric(task);
  report.scores.assign(opts.seeds.size(), 0.0);
  std::vector<std::string> errors(opts.seeds.size());
  model::Model saved;

  const int64_t count = static_cast<int64_t>(opts.seeds.size());
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < count; ++i) {
    try {
      report.scores[static_cast<size_t>(i)] =
          train_and_score(pretrained, opts.seeds[static_cast<size_t>(i)], token_level, num_labels,
                          train, test, label_set, task, opts,
                          i == 0 && !opts.save_model_path.empty() ? &saved : nullptr);
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(i)] = e.what();
    }
  }
  for (const auto& err : errors)
    if (!err.empty()) throw std::runtime_error("finetune seed failed: " + err);

  if (!opts.save_model_path.empty()) model::save_checkpoint(saved, opts.save_model_path);
  const auto agg = aggregate_runs(report.scores);
  report.mean = agg.mean;
  report.std_dev = agg.std_dev;
  report.single_run = agg.single_run;
  return report;
}

}  // namespace

EvalReport finetune_token_task(const model::Model& pretrained, const tok::Tokenizer& tokenizer,
                               const TokenTaskDataset& train, const TokenTaskDataset& test,
                               Task task, const FinetuneOptions& opts) {
  if (task == Task::Ntc) throw std::runtime_error("finetune_token_task: ntc is sequence-level");
  check_label_cover(train.label_set, test.label_set);
  const auto to_id = label_index(train.label_set);
  std::vector<Encoded> etrain, etest;
  for (const auto& s : train.sentences)
    etrain.push_back(encode_token_sentence(tokenizer, s, to_id, pretrained.cfg.max_seq_len));
  for (const auto& s : test.sentences)
    etest.push_back(encode_token_sentence(tokenizer, s, to_id, pretrained.cfg.max_seq_len));
  return run_seeds(pretrained, true, static_cast<int64_t>(train.label_set.size()), etrain, etest,
                   train.label_set, task, opts);
}

EvalReport finetune_seq_task(const model::Model& pretrained, const tok::Tokenizer& tokenizer,
                             const SeqTaskDataset& train, const SeqTaskDataset& test,
                             const FinetuneOptions& opts) {
  check_label_cover(train.label_set, test.label_set);
  const auto to_id = label_index(train.label_set);
  std::vector<Encoded> etrain, etest;
  for (const auto& ex : train.examples)
    etrain.push_back(encode_seq_example(tokenizer, ex, to_id, pretrained.cfg.max_seq_len));
  for (const auto& ex : test.examples)
    etest.push_back(encode_seq_example(tokenizer, ex, to_id, pretrained.cfg.max_seq_len));
  return run_seeds(pretrained, false, static_cast<int64_t>(train.label_set.size()), etrain, etest,
                   train.label_set, Task::Ntc, opts);
}

double evaluate_token_task(const model::Model& m, const tok::Tokenizer& tokenizer,
                           const TokenTaskDataset& data, Task task,
                           const std::vector<std::string>& label_set) {
  if (!m.params.has("head.tokcls.w"))
    throw std::runtime_error("evaluate: checkpoint has no token classification head");
  if (m.params.at("head.tokcls.w").rows() != static_cast<int64_t>(label_set.size()))
    throw std::runtime_error("evaluate: head size does not match label set");
  const auto to_id = label_index(label_set);
  std::vector<std::string> pred, gold;
  for (const auto& s : data.sentences) {
    const Encoded e = encode_token_sentence(tokenizer, s, to_id, m.cfg.max_seq_len);
    ag::Graph g;
    BoundParams bp;
    for (const auto& [name, t] : m.params.params) bp.vars[name] = g.input(t);
    auto hs = model::encoder_forward(g, m.cfg, bp, e.ids);
    const Tensor& lt = g.value(model::token_cls_head(g, bp, hs.last()));
    for (size_t p = 0; p < e.positions.size(); ++p) {
      int64_t best = 0;
      for (int64_t c = 1; c < lt.cols(); ++c)
        if (lt.at(e.positions[p], c) > lt.at(e.positions[p], best)) best = c;
      pred.push_back(label_set[static_cast<size_t>(best)]);
      gold.push_back(label_set[static_cast<size_t>(e.targets[p])]);
    }
  }
  return task == Task::Pos ? accuracy(pred, gold) : weighted_f1(pred, gold, label_set);
}

double evaluate_seq_task(const model::Model& m, const tok::Tokenizer& tokenizer,
                         const SeqTaskDataset& data, const std::vector<std::string>& label_set) {
  if (!m.params.has("head.seqcls.w"))
    throw std::runtime_error("evaluate: checkpoint has no sequence classification head");
  if (m.params.at("head.seqcls.w").rows() != static_cast<int64_t>(label_set.size()))
    throw std::runtime_error("evaluate: head size does not match label set");
  const auto to_id = label_index(label_set);
  std::vector<std::string> pred, gold;
  for (const auto& ex : data.examples) {
    const Encoded e = encode_seq_example(tokenizer, ex, to_id, m.cfg.max_seq_len);
    ag::Graph g;
    BoundParams bp;
    for (const auto& [name, t] : m.params.params) bp.vars[name] = g.input(t);
    auto hs = model::encoder_forward(g, m.cfg, bp, e.ids);
    const Tensor& lt = g.value(model::seq_cls_head(g, bp, hs.last()));
    int64_t best = 0;
    for (int64_t c = 1; c < lt.cols(); ++c)
      if (lt.at(0, c) > lt.at(0, best)) best = c;
    pred.push_back(label_set[static_cast<size_t>(best)]);
    gold.push_back(ex.label);
  }
  return weighted_f1(pred, gold, label_set);
}

std::string report_jsonl(const EvalReport& report) {
  std::string out;
  for (size_t i = 0; i < report.scores.size(); ++i) {
    nlohmann::json rec;
    rec["task"] = report.task;
    rec["metric"] = report.metric;
    rec["seed_index"] = i;
    rec["score"] = report.scores[i];
    out += rec.dump() + "\n";
  }
  nlohmann::json agg;
  agg["task"] = report.task;
  agg["metric"] = report.metric;
  agg["scores"] = report.scores;
  agg["mean"] = report.mean;
  agg["std"] = report.std_dev;
  if (report.single_run) agg["single_run"] = true;
  out += agg.dump() + "\n";
  return out;
}

}  // namespace babylm::eval
