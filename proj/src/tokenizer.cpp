#include "babylm/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <sstream>
#include <stdexcept>

#include "babylm/io.hpp"

namespace babylm::tok {

namespace {

bool is_ws_cp(uint32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\v' || cp == '\f';
}

bool is_digit_cp(uint32_t cp) { return cp >= '0' && cp <= '9'; }

// Byte <-> printable code point remap in the byte-level BPE tradition:
// visible latin bytes map to themselves, everything else to 256 + counter.
struct ByteRemap {
  std::array<uint32_t, 256> byte_to_cp{};
  std::map<uint32_t, uint8_t> cp_to_byte;

  ByteRemap() {
    auto visible = [](int b) {
      return (b >= '!' && b <= '~') || (b >= 0xa1 && b <= 0xac) || (b >= 0xae && b <= 0xff);
    };
    uint32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      const uint32_t cp = visible(b) ? static_cast<uint32_t>(b) : next++;
      byte_to_cp[static_cast<size_t>(b)] = cp;
      cp_to_byte[cp] = static_cast<uint8_t>(b);
    }
  }
};

const ByteRemap& byte_remap() {
  static const ByteRemap table;
  return table;
}

std::string remap_segment(std::string_view seg) {
  std::string out;
  out.reserve(seg.size() * 2);
  for (unsigned char b : seg) io::utf8_append(out, byte_remap().byte_to_cp[b]);
  return out;
}

std::vector<std::string> split_whitespace_runs(std::string_view seg) {
  std::vector<std::string> out;
  size_t i = 0;
  std::string cur;
  bool cur_ws = false;
  while (i < seg.size()) {
    size_t j = i;
    const uint32_t cp = io::utf8_next(seg, j);
    const bool ws = is_ws_cp(cp);
    if (!cur.empty() && ws != cur_ws) {
      out.push_back(std::move(cur));
      cur.clear();
    }
    cur.append(seg.substr(i, j - i));
    cur_ws = ws;
    i = j;
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> split_digits(std::string_view seg) {
  std::vector<std::string> out;
  size_t i = 0;
  std::string cur;
  while (i < seg.size()) {
    size_t j = i;
    const uint32_t cp = io::utf8_next(seg, j);
    if (is_digit_cp(cp)) {
      if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
      out.emplace_back(seg.substr(i, j - i));
    } else {
      cur.append(seg.substr(i, j - i));
    }
    i = j;
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> codepoints(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    size_t j = i;
    io::utf8_next(s, j);
    out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool segment_is_whitespace(std::string_view seg) {
  size_t i = 0;
  while (i < seg.size()) {
    if (!is_ws_cp(io::utf8_next(seg, i))) return false;
  }
  return !seg.empty();
}

void check_utf8(std::string_view text) {
  size_t off = 0;
  if (!io::validate_utf8(text, &off))
    throw std::runtime_error("invalid UTF-8 at byte offset " + std::to_string(off));
}

// Pre-tokens that carry model content: whitespace runs are dropped for the
// WordPiece kinds (they stay in for byte-level BPE, which must round-trip).
std::vector<std::string> content_segments(std::string_view text, TokenizerKind kind) {
  check_utf8(text);
  std::vector<std::string> segs = split_whitespace_runs(text);
  if (kind != TokenizerKind::Bpe) {
    std::vector<std::string> kept;
    for (auto& s : segs)
      if (!segment_is_whitespace(s)) kept.push_back(std::move(s));
    segs = std::move(kept);
  }
  if (kind == TokenizerKind::Bpe || kind == TokenizerKind::WordPieceByteDigits) {
    for (auto& s : segs) s = remap_segment(s);
  }
  if (kind == TokenizerKind::WordPieceByteDigits) {
    std::vector<std::string> out;
    for (const auto& s : segs)
      for (auto& piece : split_digits(s)) out.push_back(std::move(piece));
    segs = std::move(out);
  }
  return segs;
}

struct WordType {
  std::vector<std::string> symbols;
  int64_t count = 0;
};

using Pair = std::pair<std::string, std::string>;

void count_pairs_of(const WordType& w, std::map<Pair, int64_t>& counts, int64_t sign) {
  for (size_t i = 0; i + 1 < w.symbols.size(); ++i)
    counts[{w.symbols[i], w.symbols[i + 1]}] += sign * w.count;
}

// Merges all left-to-right occurrences of `pair` inside a symbol sequence.
std::vector<std::string> apply_merge(const std::vector<std::string>& syms, const Pair& pair,
                                     const std::string& merged) {
  std::vector<std::string> out;
  out.reserve(syms.size());
  size_t i = 0;
  while (i < syms.size()) {
    if (i + 1 < syms.size() && syms[i] == pair.first && syms[i + 1] == pair.second) {
      out.push_back(merged);
      i += 2;
    } else {
      out.push_back(syms[i]);
      i += 1;
    }
  }
  return out;
}

void add_token(Tokenizer& t, const std::string& token) {
  if (t.token_to_id.count(token)) return;
  t.token_to_id[token] = static_cast<int32_t>(t.id_to_token.size());
  t.id_to_token.push_back(token);
}

void build_merge_ranks(Tokenizer& t) {
  t.merge_rank.clear();
  for (size_t i = 0; i < t.merges.size(); ++i) {
    if (!t.merge_rank.count(t.merges[i]))
      t.merge_rank[t.merges[i]] = static_cast<int32_t>(i);
  }
}

}  // namespace

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> names = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return names;
}

std::string kind_name(TokenizerKind k) {
  switch (k) {
    case TokenizerKind::Bpe: return "bpe";
    case TokenizerKind::WordPiece: return "wordpiece";
    case TokenizerKind::WordPieceByteDigits: return "wordpiece-byte-digits";
  }
  throw std::runtime_error("unknown tokenizer kind");
}

PreTokenizerSpec kind_pretok(TokenizerKind k) {
  switch (k) {
    case TokenizerKind::Bpe:
      return {{PreTokRule::WhitespaceSplit, PreTokRule::ByteLevelRemap}};
    case TokenizerKind::WordPiece:
      return {{PreTokRule::WhitespaceSplit}};
    case TokenizerKind::WordPieceByteDigits:
      return {{PreTokRule::WhitespaceSplit, PreTokRule::ByteLevelRemap,
               PreTokRule::DigitIsolation}};
  }
  throw std::runtime_error("unknown tokenizer kind");
}

std::vector<std::string> pretokenize(std::string_view text, const PreTokenizerSpec& spec) {
  check_utf8(text);
  std::vector<std::string> segs;
  if (!text.empty()) segs.emplace_back(text);
  for (PreTokRule rule : spec.rules) {
    std::vector<std::string> next;
    for (const auto& s : segs) {
      switch (rule) {
        case PreTokRule::WhitespaceSplit:
          for (auto& piece : split_whitespace_runs(s)) next.push_back(std::move(piece));
          break;
        case PreTokRule::ByteLevelRemap:
          next.push_back(remap_segment(s));
          break;
        case PreTokRule::DigitIsolation:
          for (auto& piece : split_digits(s)) next.push_back(std::move(piece));
          break;
      }
    }
    segs = std::move(next);
  }
  return segs;
}

std::string inverse_byte_remap(std::string_view segment) {
  std::string out;
  out.reserve(segment.size());
  size_t i = 0;
  while (i < segment.size()) {
    const uint32_t cp = io::utf8_next(segment, i);
    auto it = byte_remap().cp_to_byte.find(cp);
    if (it == byte_remap().cp_to_byte.end())
      throw std::runtime_error("inverse_byte_remap: code point not in remap table");
    out.push_back(static_cast<char>(it->second));
  }
  return out;
}

// ------------------------------------------------------------------- BPE

Tokenizer bpe_train(const std::vector<std::string>& corpus, int64_t vocab_size) {
  if (corpus.empty()) throw std::runtime_error("bpe_train: empty corpus");
  const int64_t base = kNumSpecials + kByteAlphabet;
  if (vocab_size < base)
    throw std::runtime_error("bpe_train: vocab_size must be at least " + std::to_string(base));

  Tokenizer t;
  t.kind = TokenizerKind::Bpe;
  for (const auto& s : special_tokens()) add_token(t, s);
  for (int b = 0; b < 256; ++b) {
    std::string sym;
    io::utf8_append(sym, byte_remap().byte_to_cp[static_cast<size_t>(b)]);
    add_token(t, sym);
  }

  std::map<std::string, int64_t> word_counts;
  for (const auto& doc : corpus)
    for (auto& seg : content_segments(doc, TokenizerKind::Bpe)) word_counts[seg] += 1;

  std::vector<WordType> types;
  std::map<Pair, std::set<size_t>> where;
  std::map<Pair, int64_t> pair_counts;
  for (auto& [word, count] : word_counts) {
    WordType w{codepoints(word), count};
    count_pairs_of(w, pair_counts, 1);
    types.push_back(std::move(w));
  }
  for (size_t ti = 0; ti < types.size(); ++ti)
    for (size_t i = 0; i + 1 < types[ti].symbols.size(); ++i)
      where[{types[ti].symbols[i], types[ti].symbols[i + 1]}].insert(ti);

  const int64_t budget = vocab_size - base;
  while (static_cast<int64_t>(t.merges.size()) < budget) {
    const Pair* best = nullptr;
    int64_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count) {  // map order makes ties resolve to the smaller pair
        best = &pair;
        best_count = count;
      }
    }
    if (!best || best_count < 1) break;
    const Pair pair = *best;
    const std::string merged = pair.first + pair.second;
    t.merges.push_back(pair);
    add_token(t, merged);

    const std::set<size_t> affected = where[pair];
    for (size_t ti : affected) {
      WordType& w = types[ti];
      count_pairs_of(w, pair_counts, -1);
      for (size_t i = 0; i + 1 < w.symbols.size(); ++i)
        where[{w.symbols[i], w.symbols[i + 1]}].erase(ti);
      w.symbols = apply_merge(w.symbols, pair, merged);
      count_pairs_of(w, pair_counts, 1);
      for (size_t i = 0; i + 1 < w.symbols.size(); ++i)
        where[{w.symbols[i], w.symbols[i + 1]}].insert(ti);
    }
    std::erase_if(pair_counts, [](const auto& kv) { return kv.second <= 0; });
  }
  build_merge_ranks(t);
  return t;
}

// -------------------------------------------------------------- WordPiece

Tokenizer wordpiece_train(const std::vector<std::string>& corpus, int64_t vocab_size,
                          TokenizerKind kind) {
  if (kind == TokenizerKind::Bpe) throw std::runtime_error("wordpiece_train: wrong kind");
  if (corpus.empty()) throw std::runtime_error("wordpiece_train: empty corpus");

  std::map<std::string, int64_t> word_counts;
  for (const auto& doc : corpus)
    for (auto& seg : content_segments(doc, kind)) word_counts[seg] += 1;

  std::vector<WordType> types;
  for (auto& [word, count] : word_counts) {
    auto cps = codepoints(word);
    WordType w;
    w.count = count;
    for (size_t i = 0; i < cps.size(); ++i)
      w.symbols.push_back(i == 0 ? cps[i] : "##" + cps[i]);
    types.push_back(std::move(w));
  }

  // Alphabet: every positional form seen in the corpus, sorted.
  std::set<std::string> alphabet;
  for (const auto& w : types)
    for (const auto& s : w.symbols) alphabet.insert(s);

  Tokenizer t;
  t.kind = kind;
  for (const auto& s : special_tokens()) add_token(t, s);
  for (const auto& s : alphabet) add_token(t, s);
  if (vocab_size < t.vocab_size())
    throw std::runtime_error("wordpiece_train: vocab_size " + std::to_string(vocab_size) +
                             " below alphabet+specials " + std::to_string(t.vocab_size()));

  std::map<std::string, int64_t> sym_freq;
  std::map<Pair, int64_t> pair_counts;
  std::map<Pair, std::set<size_t>> where;
  for (size_t ti = 0; ti < types.size(); ++ti) {
    const WordType& w = types[ti];
    for (const auto& s : w.symbols) sym_freq[s] += w.count;
    count_pairs_of(w, pair_counts, 1);
    for (size_t i = 0; i + 1 < w.symbols.size(); ++i)
      where[{w.symbols[i], w.symbols[i + 1]}].insert(ti);
  }

  // score(pair) = count(pair) / (freq(left) * freq(right)); exact comparison
  // via cross-multiplication in 128-bit integers.
  auto better = [&](const Pair& a, int64_t ca, const Pair& b, int64_t cb) {
    const __int128 lhs = static_cast<__int128>(ca) * sym_freq.at(b.first) * sym_freq.at(b.second);
    const __int128 rhs = static_cast<__int128>(cb) * sym_freq.at(a.first) * sym_freq.at(a.second);
    if (lhs != rhs) return lhs > rhs;
    return a < b;
  };

  while (t.vocab_size() < vocab_size) {
    const Pair* best = nullptr;
    int64_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count < 1) continue;
      if (!best || better(pair, count, *best, best_count)) {
        best = &pair;
        best_count = count;
      }
    }
    if (!best) break;
    const Pair pair = *best;
    // Non-initial symbols carry "##"; drop the right part's prefix on merge.
    const std::string merged =
        pair.first + (pair.second.rfind("##", 0) == 0 ? pair.second.substr(2) : pair.second);
    add_token(t, merged);

    const std::set<size_t> affected = where[pair];
    for (size_t ti : affected) {
      WordType& w = types[ti];
      count_pairs_of(w, pair_counts, -1);
      for (size_t i = 0; i + 1 < w.symbols.size(); ++i)
        where[{w.symbols[i], w.symbols[i + 1]}].erase(ti);
      auto next = apply_merge(w.symbols, pair, merged);
      int64_t occurrences = 0;
      for (const auto& s : next)
        if (s == merged) ++occurrences;
      int64_t prev_merged = 0;
      for (const auto& s : w.symbols)
        if (s == merged) ++prev_merged;
      const int64_t new_occ = occurrences - prev_merged;
      sym_freq[merged] += new_occ * w.count;
      sym_freq[pair.first] -= new_occ * w.count;
      sym_freq[pair.second] -= new_occ * w.count;
      w.symbols = std::move(next);
      count_pairs_of(w, pair_counts, 1);
      for (size_t i = 0; i + 1 < w.symbols.size(); ++i)
        where[{w.symbols[i], w.symbols[i + 1]}].insert(ti);
    }
    pair_counts.erase(pair);
    std::erase_if(pair_counts, [](const auto& kv) { return kv.second <= 0; });
  }
  return t;
}

// ---------------------------------------------------------------- encode

namespace {

std::vector<int32_t> bpe_encode_segment(const Tokenizer& t, const std::string& seg) {
  std::vector<std::string> syms = codepoints(seg);
  while (syms.size() > 1) {
    int32_t best_rank = INT32_MAX;
    Pair best;
    for (size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = t.merge_rank.find({syms[i], syms[i + 1]});
      if (it != t.merge_rank.end() && it->second < best_rank) {
        best_rank = it->second;
        best = it->first;
      }
    }
    if (best_rank == INT32_MAX) break;
    syms = apply_merge(syms, best, best.first + best.second);
  }
  std::vector<int32_t> ids;
  ids.reserve(syms.size());
  for (const auto& s : syms) ids.push_back(t.token_to_id.at(s));
  return ids;
}

std::vector<int32_t> wordpiece_encode_segment(const Tokenizer& t, const std::string& seg) {
  const std::vector<std::string> cps = codepoints(seg);
  std::vector<size_t> starts(cps.size() + 1, 0);
  for (size_t i = 0; i < cps.size(); ++i) starts[i + 1] = starts[i] + cps[i].size();

  std::vector<int32_t> pieces;
  size_t start = 0;
  while (start < cps.size()) {
    size_t end = cps.size();
    int32_t match = -1;
    while (start < end) {
      std::string sub = seg.substr(starts[start], starts[end] - starts[start]);
      if (start > 0) sub = "##" + sub;
      auto it = t.token_to_id.find(sub);
      if (it != t.token_to_id.end()) {
        match = it->second;
        break;
      }
      --end;
    }
    if (match < 0) return {kUnk};  // unmatchable character: the word becomes [UNK]
    pieces.push_back(match);
    start = end;
  }
  return pieces;
}

}  // namespace

std::vector<int32_t> Tokenizer::encode(std::string_view text) const {
  std::vector<int32_t> ids;
  for (const auto& seg : content_segments(text, kind)) {
    const auto piece_ids = kind == TokenizerKind::Bpe ? bpe_encode_segment(*this, seg)
                                                      : wordpiece_encode_segment(*this, seg);
    ids.insert(ids.end(), piece_ids.begin(), piece_ids.end());
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int32_t> ids) const {
  std::string joined;
  for (int32_t id : ids) {
    if (id < 0 || id >= vocab_size())
      throw std::runtime_error("decode: unknown id " + std::to_string(id));
    joined += id_to_token[static_cast<size_t>(id)];
  }
  if (kind == TokenizerKind::Bpe) return inverse_byte_remap(joined);
  // WordPiece kinds are not round-trip tokenizers; return a readable join.
  std::string out;
  for (int32_t id : ids) {
    const std::string& tk = id_to_token[static_cast<size_t>(id)];
    if (tk.rfind("##", 0) == 0) {
      out += tk.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += tk;
    }
  }
  return out;
}

std::vector<int32_t> Tokenizer::encode_words(const std::vector<std::string>& words,
                                             std::vector<int64_t>* word_index) const {
  std::vector<int32_t> ids;
  if (word_index) word_index->clear();
  for (size_t w = 0; w < words.size(); ++w) {
    const auto piece_ids = encode(words[w]);
    if (piece_ids.empty())
      throw std::runtime_error("encode_words: word " + std::to_string(w) +
                               " produced no tokens");
    for (int32_t id : piece_ids) {
      ids.push_back(id);
      if (word_index) word_index->push_back(static_cast<int64_t>(w));
    }
  }
  return ids;
}

int64_t Tokenizer::mask_token_count() const {
  int64_t k = 0;
  while (token_to_id.count("[MASK-" + std::to_string(k) + "]")) ++k;
  return k;
}

int32_t Tokenizer::mask_token_id(int64_t n) const {
  auto it = token_to_id.find("[MASK-" + std::to_string(n) + "]");
  if (it == token_to_id.end())
    throw std::runtime_error("mask_token_id: no [MASK-" + std::to_string(n) + "] in vocab");
  return it->second;
}

void augment_mask_tokens(Tokenizer& t, int64_t k) {
  if (k < 1) throw std::runtime_error("augment_mask_tokens: k must be >= 1");
  for (int64_t n = 0; n < k; ++n) {
    const std::string token = "[MASK-" + std::to_string(n) + "]";
    if (t.token_to_id.count(token))
      throw std::runtime_error("augment_mask_tokens: token collision on " + token);
  }
  for (int64_t n = 0; n < k; ++n) {
    const std::string token = "[MASK-" + std::to_string(n) + "]";
    t.token_to_id[token] = static_cast<int32_t>(t.id_to_token.size());
    t.id_to_token.push_back(token);
  }
}

// ------------------------------------------------------------------- file

void save_tokenizer(const Tokenizer& t, const std::string& path) {
  std::string out = "TOKFMT v1 " + kind_name(t.kind) + "\n";
  for (size_t i = 0; i < t.id_to_token.size(); ++i)
    out += std::to_string(i) + "\t" + t.id_to_token[i] + "\n";
  if (t.kind == TokenizerKind::Bpe) {
    out += "#MERGES\n";
    for (const auto& [l, r] : t.merges) out += l + " " + r + "\n";
  }
  io::write_file_atomic(path, out);
}

Tokenizer load_tokenizer(const std::string& path) {
  const std::string content = io::read_file(path);
  std::istringstream is(content);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("tokenizer file empty: " + path);
  Tokenizer t;
  if (line == "TOKFMT v1 bpe") {
    t.kind = TokenizerKind::Bpe;
  } else if (line == "TOKFMT v1 wordpiece") {
    t.kind = TokenizerKind::WordPiece;
  } else if (line == "TOKFMT v1 wordpiece-byte-digits") {
    t.kind = TokenizerKind::WordPieceByteDigits;
  } else {
    throw std::runtime_error("tokenizer file has bad header: " + line);
  }
  bool in_merges = false;
  int64_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line == "#MERGES") {
      if (t.kind != TokenizerKind::Bpe)
        throw std::runtime_error("tokenizer file: unexpected #MERGES section");
      in_merges = true;
      continue;
    }
    if (!in_merges) {
      const size_t tab = line.find('\t');
      if (tab == std::string::npos)
        throw std::runtime_error("tokenizer file line " + std::to_string(line_no) + ": missing tab");
      int64_t id = -1;
      try {
        id = std::stoll(line.substr(0, tab));
      } catch (const std::exception&) {
        throw std::runtime_error("tokenizer file line " + std::to_string(line_no) + ": bad id");
      }
      const std::string token = line.substr(tab + 1);
      if (id != static_cast<int64_t>(t.id_to_token.size()))
        throw std::runtime_error("tokenizer file line " + std::to_string(line_no) +
                                 ": ids must be dense and ascending");
      if (t.token_to_id.count(token) == 0)
        t.token_to_id[token] = static_cast<int32_t>(id);
      t.id_to_token.push_back(token);
    } else {
      const size_t sp = line.find(' ');
      if (sp == std::string::npos)
        throw std::runtime_error("tokenizer file line " + std::to_string(line_no) + ": bad merge");
      std::string left = line.substr(0, sp);
      std::string right = line.substr(sp + 1);
      if (t.kind == TokenizerKind::Bpe) {
        const std::string merged = left + right;
        if (!t.token_to_id.count(left) || !t.token_to_id.count(right) ||
            !t.token_to_id.count(merged))
          throw std::runtime_error("tokenizer file line " + std::to_string(line_no) +
                                   ": merge parts missing from vocab");
      }
      t.merges.emplace_back(std::move(left), std::move(right));
    }
  }
  build_merge_ranks(t);
  return t;
}

}  // namespace babylm::tok
