#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "babylm/io.hpp"
#include "babylm/rng.hpp"
#include "babylm/tokenizer.hpp"

using namespace babylm;
using namespace babylm::tok;

namespace {

std::string join_inverse(const std::vector<std::string>& segs, bool remapped) {
  std::string joined;
  for (const auto& s : segs) joined += s;
  return remapped ? inverse_byte_remap(joined) : joined;
}

std::string random_utf8(Rng& rng, size_t max_cps) {
  std::string out;
  const size_t n = 1 + static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(max_cps)));
  for (size_t i = 0; i < n; ++i) {
    uint32_t cp;
    switch (rng.uniform_int(4)) {
      case 0: cp = static_cast<uint32_t>(rng.uniform_int(0x80)); break;
      case 1: cp = 0x80 + static_cast<uint32_t>(rng.uniform_int(0x800 - 0x80)); break;
      case 2:
        do {
          cp = 0x800 + static_cast<uint32_t>(rng.uniform_int(0x10000 - 0x800));
        } while (cp >= 0xd800 && cp <= 0xdfff);
        break;
      default: cp = 0x10000 + static_cast<uint32_t>(rng.uniform_int(0x10ffff - 0x10000)); break;
    }
    io::utf8_append(out, cp);
  }
  return out;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("pretokenize: digit isolation and empties") {
  PreTokenizerSpec digits{{PreTokRule::DigitIsolation}};
  auto segs = pretokenize("abc123", digits);
  REQUIRE(segs.size() == 4);
  CHECK(segs[0] == "abc");
  CHECK(segs[1] == "1");
  CHECK(segs[2] == "2");
  CHECK(segs[3] == "3");

  CHECK(pretokenize("", digits).empty());
  CHECK(pretokenize("", kind_pretok(TokenizerKind::Bpe)).empty());
}

TEST_CASE("pretokenize: byte remap round-trips non-ascii text") {
  const std::string text = "\xc3\xa5r 2024";  // "år 2024"
  auto segs = pretokenize(text, kind_pretok(TokenizerKind::Bpe));
  CHECK(join_inverse(segs, true) == text);

  auto segs2 = pretokenize(text, kind_pretok(TokenizerKind::WordPieceByteDigits));
  CHECK(join_inverse(segs2, true) == text);

  // Digit isolation puts each digit in its own segment even after remapping.
  int digit_segments = 0;
  for (const auto& s : segs2)
    if (s == "2" || s == "0" || s == "4") ++digit_segments;
  CHECK(digit_segments == 4);
}

TEST_CASE("pretokenize: random strings always reassemble") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::string text = random_utf8(rng, 60);
    for (TokenizerKind kind :
         {TokenizerKind::Bpe, TokenizerKind::WordPiece, TokenizerKind::WordPieceByteDigits}) {
      auto segs = pretokenize(text, kind_pretok(kind));
      const bool remapped = kind != TokenizerKind::WordPiece;
      CHECK(join_inverse(segs, remapped) == text);
    }
  }
}

TEST_CASE("pretokenize rejects invalid UTF-8 with a byte offset") {
  std::string bad = "ok";
  bad.push_back(static_cast<char>(0xff));
  CHECK_THROWS_WITH_AS(pretokenize(bad, kind_pretok(TokenizerKind::Bpe)),
                       doctest::Contains("offset 2"), std::runtime_error);
}

TEST_CASE("bpe_train: first merge maximizes pair count with lexicographic ties") {
  // Exhaustive oracle: count adjacent pairs over the corpus directly.
  const std::vector<std::string> corpus = {"abab", "abab"};
  std::map<std::pair<std::string, std::string>, int> oracle;
  for (const auto& w : corpus)
    for (size_t i = 0; i + 1 < w.size(); ++i)
      oracle[{std::string(1, w[i]), std::string(1, w[i + 1])}] += 1;
  CHECK(oracle[{"a", "b"}] == 4);
  CHECK(oracle[{"b", "a"}] == 2);

  auto t = bpe_train(corpus, kNumSpecials + kByteAlphabet + 1);
  REQUIRE(t.merges.size() == 1);
  CHECK(t.merges[0].first == "a");
  CHECK(t.merges[0].second == "b");
}

TEST_CASE("bpe_train: zero-merge budget and empty corpus") {
  auto t = bpe_train({"hello"}, kNumSpecials + kByteAlphabet);
  CHECK(t.merges.empty());
  CHECK(t.vocab_size() == kNumSpecials + kByteAlphabet);
  CHECK_THROWS_AS(bpe_train({}, 1000), std::runtime_error);
}

TEST_CASE("bpe round-trips training strings and arbitrary text") {
  const std::vector<std::string> corpus = {"umzekelo wokuqala", "isiXhosa 2024",
                                           "umzekelo wesibini\nnemigca emibini"};
  auto t = bpe_train(corpus, 300);
  for (const auto& s : corpus) CHECK(t.decode(t.encode(s)) == s);

  CHECK(t.encode("").empty());
  CHECK(t.decode(t.encode("xhosa")) == "xhosa");

  Rng rng(5);
  std::string blob;
  while (blob.size() < 1024) blob += random_utf8(rng, 40);
  CHECK(t.decode(t.encode(blob)) == blob);
}

TEST_CASE("bpe decode rejects unknown ids") {
  auto t = bpe_train({"ab"}, 270);
  std::vector<int32_t> bad{static_cast<int32_t>(t.vocab_size())};
  CHECK_THROWS_AS((void)t.decode(bad), std::runtime_error);
}

TEST_CASE("bpe training is deterministic") {
  const std::vector<std::string> corpus = {"aab abb bba", "baa aab bab"};
  auto t1 = bpe_train(corpus, 280);
  auto t2 = bpe_train(corpus, 280);
  CHECK(t1.id_to_token == t2.id_to_token);
  CHECK(t1.merges == t2.merges);
}

TEST_CASE("wordpiece_train: single-word corpus grows a longer piece") {
  auto t = wordpiece_train({"aaaa"}, 64);
  CHECK(t.token_to_id.count("a"));
  const bool longer = t.token_to_id.count("a##a") || t.token_to_id.count("aa") ||
                      t.token_to_id.count("aaa") || t.token_to_id.count("aaaa");
  CHECK(longer);
  CHECK_THROWS_AS(wordpiece_train({}, 64), std::runtime_error);
}

TEST_CASE("wordpiece encoding covers every training word without [UNK]") {
  const std::vector<std::string> corpus = {"umntwana uyafunda", "abantwana bayafunda",
                                           "intombazana incuma kamnandi"};
  auto t = wordpiece_train(corpus, 96);
  for (const auto& doc : corpus) {
    for (int32_t id : t.encode(doc)) CHECK(id != kUnk);
  }
  CHECK(t.encode("").empty());
}

TEST_CASE("wordpiece_encode: longest match, continuations, unknowns") {
  auto t = wordpiece_train({"ab a b"}, 64);
  REQUIRE(t.token_to_id.count("ab"));
  auto single = t.encode("ab");
  REQUIRE(single.size() == 1);
  CHECK(single[0] == t.token_to_id.at("ab"));

  // A vocab with {a, ##b} but no "ab" splits the word.
  Tokenizer manual;
  manual.kind = TokenizerKind::WordPiece;
  for (const auto& s : special_tokens()) {
    manual.token_to_id[s] = static_cast<int32_t>(manual.id_to_token.size());
    manual.id_to_token.push_back(s);
  }
  for (const std::string s : {"a", "##b"}) {
    manual.token_to_id[s] = static_cast<int32_t>(manual.id_to_token.size());
    manual.id_to_token.push_back(s);
  }
  auto split = manual.encode("ab");
  REQUIRE(split.size() == 2);
  CHECK(split[0] == manual.token_to_id.at("a"));
  CHECK(split[1] == manual.token_to_id.at("##b"));

  auto unk = t.encode("\xe2\x98\x83");  // snowman, unseen
  REQUIRE(unk.size() == 1);
  CHECK(unk[0] == kUnk);
}

TEST_CASE("augment_mask_tokens: contiguous fresh ids, collision on reapply") {
  auto t = wordpiece_train({"abc"}, 64);
  const int64_t base = t.vocab_size();
  augment_mask_tokens(t, 3);
  CHECK(t.vocab_size() == base + 3);
  CHECK(t.mask_token_count() == 3);
  for (int64_t n = 0; n < 3; ++n) CHECK(t.mask_token_id(n) == base + n);
  CHECK_THROWS_WITH_AS(augment_mask_tokens(t, 3), doctest::Contains("collision"),
                       std::runtime_error);
}

TEST_CASE("augment_mask_tokens: full k=3000 family") {
  auto t = wordpiece_train({"abc"}, 64);
  const int64_t base = t.vocab_size();
  augment_mask_tokens(t, 3000);
  CHECK(t.mask_token_count() == 3000);
  CHECK(t.vocab_size() == base + 3000);
  CHECK(t.mask_token_id(2999) == base + 2999);
  std::set<int32_t> distinct;
  for (int64_t n = 0; n < 3000; ++n) distinct.insert(t.mask_token_id(n));
  CHECK(distinct.size() == 3000);
}

TEST_CASE("tokenizer files round-trip bit-exactly") {
  Rng rng(9);
  std::vector<std::string> corpus;
  for (int i = 0; i < 30; ++i) corpus.push_back(random_utf8(rng, 30));
  corpus.push_back("plain ascii words with 123 numbers");

  auto check_roundtrip = [&](const Tokenizer& t, const std::string& name) {
    const std::string p1 = tmp_path(name + ".tok");
    const std::string p2 = tmp_path(name + ".tok2");
    save_tokenizer(t, p1);
    Tokenizer loaded = load_tokenizer(p1);
    save_tokenizer(loaded, p2);
    CHECK(io::read_file(p1) == io::read_file(p2));
    CHECK(loaded.id_to_token == t.id_to_token);
    CHECK(loaded.merges == t.merges);
    CHECK(loaded.kind == t.kind);
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
  };

  check_roundtrip(bpe_train(corpus, 320), "rt_bpe");
  check_roundtrip(wordpiece_train(corpus, 700), "rt_wp");
  auto elc = wordpiece_train(corpus, 700, TokenizerKind::WordPieceByteDigits);
  check_roundtrip(elc, "rt_wpbd");
  auto mlsm = wordpiece_train(corpus, 700);
  augment_mask_tokens(mlsm, 16);
  check_roundtrip(mlsm, "rt_wpm");

  // Encodings survive the round-trip too.
  const std::string p = tmp_path("rt_enc.tok");
  save_tokenizer(elc, p);
  auto loaded = load_tokenizer(p);
  for (const auto& doc : corpus) CHECK(loaded.encode(doc) == elc.encode(doc));
  std::filesystem::remove(p);
}
