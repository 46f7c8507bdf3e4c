#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "babylm/model.hpp"
#include "babylm/tokenizer.hpp"

namespace babylm::eval {

enum class Task { Pos, Ner, Ntc };

std::string task_name(Task t);
std::string task_metric(Task t);  // accuracy for pos, weighted_f1 otherwise

struct TokenSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> labels;
};

struct TokenTaskDataset {
  std::vector<TokenSentence> sentences;
  std::vector<std::string> label_set;       // sorted, unique
  std::vector<std::string> bio_violations;  // reported, never silently fixed
};

// token<TAB>label lines, blank line between sentences. With validate_bio the
// I-X-after-something-else violations are collected into bio_violations.
TokenTaskDataset load_conll(const std::string& path, bool validate_bio);
TokenTaskDataset conll_from_text(const std::string& text, bool validate_bio);

struct SeqExample {
  std::string label;
  std::string text;
};

struct SeqTaskDataset {
  std::vector<SeqExample> examples;
  std::vector<std::string> label_set;
};

// label<TAB>text lines; CRLF tolerated; empty text is an error.
SeqTaskDataset load_tsv_classification(const std::string& path);
SeqTaskDataset tsv_classification_from_text(const std::string& text);

// First subword of each word carries the word's label id; continuations get
// -1. Throws if any word contributed no subwords.
std::vector<int64_t> align_labels(const std::vector<int64_t>& word_index, int64_t num_words,
                                  const std::vector<int64_t>& word_label_ids);

// Metrics over parallel prediction/gold label lists (ignored positions are
// excluded by the caller).
double accuracy(std::span<const std::string> pred, std::span<const std::string> gold);
double weighted_f1(std::span<const std::string> pred, std::span<const std::string> gold,
                   const std::vector<std::string>& label_set);

struct Aggregate {
  double mean = 0.0;
  double std_dev = 0.0;       // sample (n-1); 0 when n == 1
  bool single_run = false;    // flagged when std is undefined
};
Aggregate aggregate_runs(std::span<const double> scores);

// Deterministic 80/10/10 split by hashed example index.
struct SplitIndices {
  std::vector<size_t> train, dev, test;
};
SplitIndices split_indices(size_t n);

struct FinetuneOptions {
  int64_t epochs = 20;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  double lr = 5e-4;
  int64_t batch_size = 8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  double warmup_fraction = 0.01;
  std::string save_model_path;  // when set, the first seed's model is saved
};

struct EvalReport {
  std::string task;
  std::string metric;
  std::vector<double> scores;  // one per seed
  double mean = 0.0;
  double std_dev = 0.0;
  bool single_run = false;
};

// Reinitializes the task head per seed, trains on `train`, scores on `test`.
EvalReport finetune_token_task(const model::Model& pretrained, const tok::Tokenizer& tokenizer,
                               const TokenTaskDataset& train, const TokenTaskDataset& test,
                               Task task, const FinetuneOptions& opts);
EvalReport finetune_seq_task(const model::Model& pretrained, const tok::Tokenizer& tokenizer,
                             const SeqTaskDataset& train, const SeqTaskDataset& test,
                             const FinetuneOptions& opts);

// Scores an already finetuned model (head parameters must be present).
double evaluate_token_task(const model::Model& m, const tok::Tokenizer& tokenizer,
                           const TokenTaskDataset& data, Task task,
                           const std::vector<std::string>& label_set);
double evaluate_seq_task(const model::Model& m, const tok::Tokenizer& tokenizer,
                         const SeqTaskDataset& data, const std::vector<std::string>& label_set);

// JSON-lines report: one record per seed plus one aggregate record.
std::string report_jsonl(const EvalReport& report);

}  // namespace babylm::eval
