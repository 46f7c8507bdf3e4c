#include "babylm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "babylm/io.hpp"
#include "babylm/kernels.hpp"

namespace babylm::analysis {

ContributionMatrix extract_layer_weights(const model::Model& m) {
  if (m.cfg.residual_mode != model::ResidualMode::Elc || !m.params.has(model::kElcAlphaName))
    throw std::runtime_error("no layer weights");
  const Tensor& alpha = m.params.at(model::kElcAlphaName);
  ContributionMatrix out;
  for (int64_t r = 0; r < alpha.rows(); ++r) {
    std::vector<float> logits(static_cast<size_t>(r + 1));
    for (int64_t j = 0; j <= r; ++j) logits[static_cast<size_t>(j)] = alpha.at(r, j);
    out.rows.push_back(kernels::softmax(logits));
  }
  return out;
}

void export_heatmap_csv(const ContributionMatrix& matrix, const std::string& path) {
  const int64_t layers = static_cast<int64_t>(matrix.rows.size());
  std::string out = "layer";
  for (int64_t j = 0; j <= layers; ++j) out += ",out_" + std::to_string(j);
  out += "\n";
  for (int64_t r = 0; r < layers; ++r) {
    out += std::to_string(r + 1);
    for (int64_t j = 0; j <= layers; ++j) {
      out += ",";
      if (j < static_cast<int64_t>(matrix.rows[static_cast<size_t>(r)].size())) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.9g",
                      matrix.rows[static_cast<size_t>(r)][static_cast<size_t>(j)]);
        out += buf;
      }
    }
    out += "\n";
  }
  io::write_file_atomic(path, out);
}

ContributionMatrix parse_heatmap_csv(const std::string& content) {
  ContributionMatrix out;
  std::istringstream is(content);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("heatmap csv: empty");
  if (line.rfind("layer,", 0) != 0) throw std::runtime_error("heatmap csv: bad header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<float> row;
    size_t start = line.find(',');
    if (start == std::string::npos) throw std::runtime_error("heatmap csv: bad row");
    ++start;
    while (start <= line.size()) {
      size_t end = line.find(',', start);
      if (end == std::string::npos) end = line.size();
      const std::string cell = line.substr(start, end - start);
      if (!cell.empty()) row.push_back(std::stof(cell));
      start = end + 1;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

void export_heatmap_svg(const ContributionMatrix& matrix, const std::string& path) {
  const int64_t layers = static_cast<int64_t>(matrix.rows.size());
  const int64_t cols = layers;  // outputs 0..layers-1 are the widest row
  const int cell = 40, margin = 60;
  const int width = margin + static_cast<int>(cols + 1) * cell + 20;
  const int height = margin + static_cast<int>(layers) * cell + 20;
  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const bool numeric = layers <= 16;
  for (int64_t r = 0; r < layers; ++r) {
    const auto& row = matrix.rows[static_cast<size_t>(r)];
    for (int64_t j = 0; j < static_cast<int64_t>(row.size()); ++j) {
      const float w = row[static_cast<size_t>(j)];
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - w)));
      const int x = margin + static_cast<int>(j) * cell;
      const int y = margin + static_cast<int>(r) * cell;
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                    "fill=\"rgb(%d,%d,%d)\" stroke=\"gray\"/>\n",
                    x, y, cell, cell, shade, shade, shade);
      svg += buf;
      if (numeric) {
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%d\" y=\"%d\" font-size=\"9\" text-anchor=\"middle\" "
                      "fill=\"%s\">%.2f</text>\n",
                      x + cell / 2, y + cell / 2 + 3, w > 0.5f ? "white" : "black", w);
        svg += buf;
      }
    }
    char lbl[128];
    std::snprintf(lbl, sizeof(lbl),
                  "<text x=\"%d\" y=\"%d\" font-size=\"11\" text-anchor=\"end\">layer %lld</text>\n",
                  margin - 6, margin + static_cast<int>(r) * cell + cell / 2 + 4,
                  static_cast<long long>(r + 1));
    svg += lbl;
  }
  for (int64_t j = 0; j < cols; ++j) {
    char lbl[128];
    std::snprintf(lbl, sizeof(lbl),
                  "<text x=\"%d\" y=\"%d\" font-size=\"11\" text-anchor=\"middle\">out %lld</text>\n",
                  margin + static_cast<int>(j) * cell + cell / 2, margin - 8,
                  static_cast<long long>(j));
    svg += lbl;
  }
  svg += "</svg>\n";
  io::write_file_atomic(path, svg);
}

namespace {

// Finds `word` among the sentence's whitespace tokens; errors when absent.
std::vector<std::string> sentence_words(const std::string& sentence) {
  std::vector<std::string> words;
  std::istringstream is(sentence);
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

}  // namespace

SemanticProfile predict_semantic_topk(const model::Model& student,
                                      const tok::Tokenizer& tokenizer,
                                      const mlsm::SemanticDictionary& dict,
                                      const std::string& sentence, const std::string& word,
                                      int64_t top_count) {
  const int64_t k = dict.k;
  if (!student.params.has("head.latent.w") || student.params.at("head.latent.w").rows() != k)
    throw std::runtime_error("predict_semantic_topk: student latent head does not match dictionary");
  if (top_count < 1 || top_count > k)
    throw std::runtime_error("predict_semantic_topk: top count out of range");

  const auto words = sentence_words(sentence);
  std::vector<int64_t> hits;
  for (size_t i = 0; i < words.size(); ++i)
    if (words[i] == word) hits.push_back(static_cast<int64_t>(i));
  if (hits.empty())
    throw std::runtime_error("predict_semantic_topk: word '" + word + "' not in sentence");
  const int64_t target_word = hits[0];

  std::vector<int64_t> word_index;
  auto ids = tokenizer.encode_words(words, &word_index);
  // Replace the target word's subwords with the base mask token and remember
  // their positions ([CLS] offset applies).
  std::vector<int32_t> input;
  input.push_back(tok::kCls);
  std::vector<int64_t> positions;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (word_index[i] == target_word) {
      positions.push_back(static_cast<int64_t>(input.size()));
      input.push_back(tok::kMask);
    } else {
      input.push_back(ids[i]);
    }
  }
  input.push_back(tok::kSep);
  if (static_cast<int64_t>(input.size()) > student.cfg.max_seq_len)
    throw std::runtime_error("predict_semantic_topk: sentence exceeds max_seq_len");

  ag::Graph g;
  BoundParams bp;
  for (const auto& [name, t] : student.params.params) bp.vars[name] = g.input(t);
  auto hs = model::encoder_forward(g, student.cfg, bp, input);
  auto dist = model::latent_head(g, bp, hs.last(), positions, k);
  const Tensor& rows = g.value(dist);

  // Multi-subword targets: mean of per-position distributions, renormalized.
  std::vector<double> mean(static_cast<size_t>(k), 0.0);
  for (int64_t r = 0; r < rows.rows(); ++r)
    for (int64_t c = 0; c < k; ++c) mean[static_cast<size_t>(c)] += rows.at(r, c);
  double sum = 0.0;
  for (double v : mean) sum += v;
  for (double& v : mean) v /= sum;

  std::vector<int64_t> idx(static_cast<size_t>(k));
  for (int64_t i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
    return mean[static_cast<size_t>(a)] > mean[static_cast<size_t>(b)];
  });

  SemanticProfile profile;
  profile.word = word;
  profile.sentence = sentence;
  profile.k = k;
  for (int64_t i = 0; i < top_count; ++i)
    profile.top.emplace_back(idx[static_cast<size_t>(i)], mean[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
  return profile;
}

int64_t overlap_count(const SemanticProfile& a, const SemanticProfile& b) {
  if (a.k != b.k) throw std::runtime_error("overlap_count: profiles from different dictionaries");
  int64_t overlap = 0;
  for (const auto& [ia, pa] : a.top)
    for (const auto& [ib, pb] : b.top)
      if (ia == ib) ++overlap;
  return overlap;
}

OverlapReport overlap_report(const model::Model& student, const tok::Tokenizer& tokenizer,
                             const mlsm::SemanticDictionary& dict,
                             const std::vector<OverlapTarget>& targets, int64_t top_count) {
  if (targets.size() < 2) throw std::runtime_error("overlap_report: need at least two targets");
  OverlapReport report;
  for (const auto& t : targets)
    report.profiles.push_back(
        predict_semantic_topk(student, tokenizer, dict, t.sentence, t.word, top_count));

  const size_t n = targets.size();
  report.matrix.assign(n, std::vector<int64_t>(n, 0));
  double within = 0.0, cross = 0.0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j)
      report.matrix[i][j] = overlap_count(report.profiles[i], report.profiles[j]);
    for (size_t j = i + 1; j < n; ++j) {
      if (targets[i].group == targets[j].group) {
        within += static_cast<double>(report.matrix[i][j]);
        ++report.within_pairs;
      } else {
        cross += static_cast<double>(report.matrix[i][j]);
        ++report.cross_pairs;
      }
    }
  }
  report.within_group_mean = report.within_pairs ? within / report.within_pairs : 0.0;
  report.cross_group_mean = report.cross_pairs ? cross / report.cross_pairs : 0.0;
  return report;
}

std::string overlap_report_json(const OverlapReport& report) {
  nlohmann::json j;
  j["profiles"] = nlohmann::json::array();
  for (const auto& p : report.profiles) {
    nlohmann::json pj;
    pj["word"] = p.word;
    pj["sentence"] = p.sentence;
    pj["top"] = nlohmann::json::array();
    for (const auto& [idx, prob] : p.top) pj["top"].push_back({{"category", idx}, {"p", prob}});
    j["profiles"].push_back(pj);
  }
  j["overlap_matrix"] = report.matrix;
  j["within_group_mean"] = report.within_group_mean;
  j["cross_group_mean"] = report.cross_group_mean;
  return j.dump(2) + "\n";
}

}  // namespace babylm::analysis
