#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "babylm/mlsm.hpp"
#include "babylm/model.hpp"
#include "babylm/tokenizer.hpp"

namespace babylm::analysis {

// Softmaxed ELC weights: row r (layer r+1) holds r+1 weights over outputs
// h_0..h_r, each row a probability vector.
struct ContributionMatrix {
  std::vector<std::vector<float>> rows;
  int64_t epoch_tag = -1;
};

// Throws on a standard-mode checkpoint ("no layer weights").
ContributionMatrix extract_layer_weights(const model::Model& m);

// CSV: header `layer,out_0..out_L`, one line per layer, absent cells empty.
void export_heatmap_csv(const ContributionMatrix& matrix, const std::string& path);
ContributionMatrix parse_heatmap_csv(const std::string& content);

// Grayscale grid with row/column labels; per-cell numeric labels when the
// layer count is at most 16.
void export_heatmap_svg(const ContributionMatrix& matrix, const std::string& path);

struct SemanticProfile {
  std::string word;
  std::string sentence;
  std::vector<std::pair<int64_t, double>> top;  // (category, probability) desc
  int64_t k = 0;                                // dictionary size
};

// Masks the target word's subwords and reads the student's latent head;
// returns the T highest-probability categories.
SemanticProfile predict_semantic_topk(const model::Model& student,
                                      const tok::Tokenizer& tokenizer,
                                      const mlsm::SemanticDictionary& dict,
                                      const std::string& sentence, const std::string& word,
                                      int64_t top_count = 10);

// |top-category set A  intersect  set B|; profiles must share k.
int64_t overlap_count(const SemanticProfile& a, const SemanticProfile& b);

struct OverlapTarget {
  std::string word;
  std::string sentence;
  std::string group;
};

struct OverlapReport {
  std::vector<SemanticProfile> profiles;
  std::vector<std::vector<int64_t>> matrix;  // symmetric, diagonal = T
  double within_group_mean = 0.0;
  double cross_group_mean = 0.0;
  int64_t within_pairs = 0;
  int64_t cross_pairs = 0;
};

OverlapReport overlap_report(const model::Model& student, const tok::Tokenizer& tokenizer,
                             const mlsm::SemanticDictionary& dict,
                             const std::vector<OverlapTarget>& targets, int64_t top_count);

std::string overlap_report_json(const OverlapReport& report);

}  // namespace babylm::analysis
