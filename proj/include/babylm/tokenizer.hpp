#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace babylm::tok {

// Special token ids shared by every tokenizer kind.
inline constexpr int32_t kPad = 0;
inline constexpr int32_t kUnk = 1;
inline constexpr int32_t kCls = 2;
inline constexpr int32_t kSep = 3;
inline constexpr int32_t kMask = 4;
inline constexpr int32_t kNumSpecials = 5;
inline constexpr int64_t kByteAlphabet = 256;

const std::vector<std::string>& special_tokens();

enum class PreTokRule { WhitespaceSplit, ByteLevelRemap, DigitIsolation };

struct PreTokenizerSpec {
  std::vector<PreTokRule> rules;
};

// Applies the rules in order. Segments always reassemble to the input after
// inverse byte remap. Throws on invalid UTF-8, reporting the byte offset.
std::vector<std::string> pretokenize(std::string_view text, const PreTokenizerSpec& spec);

// Reverses the byte-level remap of a single segment.
std::string inverse_byte_remap(std::string_view segment);

enum class TokenizerKind { Bpe, WordPiece, WordPieceByteDigits };

std::string kind_name(TokenizerKind k);
PreTokenizerSpec kind_pretok(TokenizerKind k);

// One trained subword model. For Bpe the merge list drives encoding; for the
// WordPiece kinds encoding is greedy longest-match with "##" continuations.
// [MASK-n] entries, when present, sit behind the base vocabulary.
struct Tokenizer {
  TokenizerKind kind = TokenizerKind::WordPiece;
  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int32_t> token_to_id;
  std::vector<std::pair<std::string, std::string>> merges;
  std::map<std::pair<std::string, std::string>, int32_t> merge_rank;

  int64_t vocab_size() const { return static_cast<int64_t>(id_to_token.size()); }

  std::vector<int32_t> encode(std::string_view text) const;
  std::string decode(std::span<const int32_t> ids) const;

  // Encodes a pre-split word sequence; word_index receives, per subword id,
  // the index of the word it came from.
  std::vector<int32_t> encode_words(const std::vector<std::string>& words,
                                    std::vector<int64_t>* word_index) const;

  // Number of [MASK-n] tokens (0 when the vocab is not augmented).
  int64_t mask_token_count() const;
  int32_t mask_token_id(int64_t n) const;
};

Tokenizer bpe_train(const std::vector<std::string>& corpus, int64_t vocab_size);
Tokenizer wordpiece_train(const std::vector<std::string>& corpus, int64_t vocab_size,
                          TokenizerKind kind = TokenizerKind::WordPiece);

// Appends k tokens [MASK-0] .. [MASK-k-1]; throws if any already exists.
void augment_mask_tokens(Tokenizer& t, int64_t k);

void save_tokenizer(const Tokenizer& t, const std::string& path);
Tokenizer load_tokenizer(const std::string& path);

}  // namespace babylm::tok
