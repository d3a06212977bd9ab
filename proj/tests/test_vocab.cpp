#include <map>
#include <set>
#include <sstream>
#include <string>

#include "bertlab/io.hpp"
#include "bertlab/packing.hpp"
#include "bertlab/rng.hpp"
#include "bertlab/vocab.hpp"
#include "doctest.h"

using namespace bertlab;

namespace {

// Independent pair-frequency oracle: counts marker-stripped adjacent pairs
// over the pre-tokenized corpus, exactly as the trainer is contracted to.
std::map<std::pair<std::string, std::string>, long> count_pairs(const std::string& corpus) {
  std::map<std::pair<std::string, std::string>, long> counts;
  std::istringstream in(corpus);
  std::string line;
  while (std::getline(in, line)) {
    for (const auto& pt : pre_tokenize(line, true)) {
      const auto chars = utf8_chars(pt.text);
      for (size_t i = 0; i + 1 < chars.size(); ++i) {
        counts[{chars[i], chars[i + 1]}] += 1;
      }
    }
  }
  return counts;
}

}  // namespace

TEST_CASE("first learned merge is the most frequent pair on a toy corpus") {
  const std::string corpus = "abab abab";
  // Oracle: (a,b) occurs twice per word, (b,a) once; no tie-break needed.
  const auto counts = count_pairs(corpus);
  CHECK(counts.at({"a", "b"}) == 4);
  CHECK(counts.at({"b", "a"}) == 2);

  // Budget: 5 specials + 4 character forms + 2 surfaces for one merge.
  Vocab v = train_bpe(corpus, 11);
  REQUIRE(v.merges.size() == 1);
  CHECK(v.merges[0] == std::pair<std::string, std::string>{"a", "b"});
  CHECK(v.token_to_id.count("ab") == 1);
  CHECK(v.token_to_id.count("##ab") == 1);
}

TEST_CASE("single-character corpus yields characters and no merges") {
  Vocab v = train_bpe(std::string("x"), 7);
  CHECK(v.merges.empty());
  CHECK(v.token_to_id.count("x") == 1);
  CHECK(v.size() == 7);  // 5 specials + "x" + "##x"
}

TEST_CASE("empty corpus errors") {
  CHECK_THROWS_WITH_AS(train_bpe(std::string(""), 100), "empty corpus", std::runtime_error);
  CHECK_THROWS_AS(train_bpe(std::string("  \n\n  \n"), 100), std::runtime_error);
}

TEST_CASE("too-small vocab budget errors with the required minimum") {
  try {
    train_bpe(std::string("abc"), 6);
    FAIL("expected error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("vocab_size too small") != std::string::npos);
    CHECK(msg.find("11") != std::string::npos);  // 5 specials + {a,b,c} x two forms
  }
}

TEST_CASE("encode/decode round-trips text over the training character set") {
  const std::string corpus =
      "the cat sat on the mat\nthe dog sat on the log\n\ncats and dogs, dogs and cats.";
  Vocab v = train_bpe(corpus, 64);

  for (const std::string& s :
       {std::string("the cat sat"), std::string("dogs and cats."), std::string("tha dog, gods"),
        std::string("a.d,c"), std::string("og og og")}) {
    const auto ids = encode(v, s);
    CHECK(decode(v, ids) == s);
  }
}

TEST_CASE("round-trip property on random strings over the character set") {
  const std::string corpus = "abc bca cab, a.b\nbb aa cc\n";
  Vocab v = train_bpe(corpus, 40);
  DetRng rng(123);
  const std::string alphabet = "abc.,";
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    const size_t words = 1 + rng.below(4);
    for (size_t w = 0; w < words; ++w) {
      if (w > 0) s += ' ';
      const size_t len = 1 + rng.below(6);
      for (size_t i = 0; i < len; ++i) s += alphabet[rng.below(alphabet.size())];
    }
    CAPTURE(s);
    CHECK(decode(v, encode(v, s)) == s);
  }
}

TEST_CASE("encode is lossy only through UNK for unseen characters") {
  Vocab v = train_bpe(std::string("aa bb"), 20);
  const auto ids = encode(v, "aza");
  bool has_unk = false;
  for (const auto id : ids) has_unk |= (id == Vocab::kUnk);
  CHECK(has_unk);
  CHECK(encode(v, "").empty());
}

TEST_CASE("encode output never contains reserved ids other than UNK") {
  const std::string corpus = "mask pad cls sep unk [MASK] [PAD]\nwords with brackets ] [";
  Vocab v = train_bpe(corpus, 120);
  const auto ids = encode(v, "[MASK] [PAD] [CLS] [SEP] plain words");
  for (const auto id : ids) {
    CHECK(id != Vocab::kPad);
    CHECK(id != Vocab::kCls);
    CHECK(id != Vocab::kSep);
    CHECK(id != Vocab::kMask);
  }
}

TEST_CASE("decode renders specials and validates ids") {
  Vocab v = train_bpe(std::string("hi"), 16);
  CHECK(decode(v, std::vector<int32_t>{Vocab::kCls, Vocab::kSep}) == "[CLS] [SEP]");
  CHECK_THROWS_AS(decode(v, std::vector<int32_t>{v.size()}), std::runtime_error);
}

TEST_CASE("token_surface strips the marker and rejects specials") {
  const std::string corpus = "running running running runs";
  Vocab v = train_bpe(corpus, 64);
  bool checked_continuation = false;
  for (int32_t id = Vocab::kNumSpecials; id < v.size(); ++id) {
    const auto surface = token_surface(v, id);
    CHECK(!surface.empty());
    if (v.is_continuation(id)) {
      checked_continuation = true;
      CHECK(v.tokens[static_cast<size_t>(id)] == "##" + surface);
    }
  }
  CHECK(checked_continuation);
  CHECK_THROWS_AS(token_surface(v, Vocab::kMask), std::runtime_error);
}

TEST_CASE("training is deterministic: identical corpus gives byte-identical vocab JSON") {
  const std::string corpus = "she sells sea shells by the sea shore\n\nthe shells she sells";
  Vocab a = train_bpe(corpus, 96);
  Vocab b = train_bpe(corpus, 96);
  CHECK(vocab_to_json(a) == vocab_to_json(b));
}

TEST_CASE("vocab JSON round-trips") {
  Vocab v = train_bpe(std::string("alpha beta gamma, alpha!"), 80);
  Vocab r = vocab_from_json(vocab_to_json(v));
  CHECK(r.tokens == v.tokens);
  CHECK(r.merges == v.merges);
  CHECK(r.continuation_marker == v.continuation_marker);
  const std::string text = "alpha, beta!";
  CHECK(encode(r, text) == encode(v, text));
}

TEST_CASE("merges are ordered by decreasing frequency") {
  // "zz" appears 3 times, "qq" twice; both merge candidates, zz must come first.
  const std::string corpus = "zz zz zz qq qq";
  Vocab v = train_bpe(corpus, 64);
  REQUIRE(v.merges.size() >= 2);
  CHECK(v.merges[0] == std::pair<std::string, std::string>{"z", "z"});
  CHECK(v.merges[1] == std::pair<std::string, std::string>{"q", "q"});
}

TEST_CASE("frequency ties break to the lexicographically smaller pair") {
  const std::string corpus = "dc dc ba ba";
  Vocab v = train_bpe(corpus, 64);
  REQUIRE(v.merges.size() >= 2);
  CHECK(v.merges[0] == std::pair<std::string, std::string>{"b", "a"});
  CHECK(v.merges[1] == std::pair<std::string, std::string>{"d", "c"});
}

TEST_CASE("pack_corpus wraps, chunks, and pads") {
  Vocab v = train_bpe(std::string("a b c d e f g h i j"), 64);

  SUBCASE("short document pads to max_len") {
    // 5 single-letter words -> 5 ids.
    const auto seqs = pack_corpus(v, {"a b c d e"}, 16);
    REQUIRE(seqs.size() == 1);
    const auto& s = seqs[0];
    CHECK(s.ids.size() == 16);
    CHECK(s.ids[0] == Vocab::kCls);
    CHECK(s.ids[6] == Vocab::kSep);
    for (size_t i = 7; i < 16; ++i) CHECK(s.ids[i] == Vocab::kPad);
  }

  SUBCASE("long document chunks into 14+14+2") {
    std::string doc;
    for (int i = 0; i < 30; ++i) {
      if (i) doc += ' ';
      doc += "a";
    }
    const auto seqs = pack_corpus(v, {doc}, 16);
    REQUIRE(seqs.size() == 3);
    auto content_len = [](const PackedSequence& s) {
      size_t n = 0;
      for (const auto id : s.ids) {
        if (!Vocab::is_special(id)) ++n;
      }
      return n;
    };
    CHECK(content_len(seqs[0]) == 14);
    CHECK(content_len(seqs[1]) == 14);
    CHECK(content_len(seqs[2]) == 2);
    CHECK(seqs[2].seq_index == 2);
  }

  SUBCASE("document boundaries are preserved and blank docs skipped") {
    std::istringstream in("doc one here\n\n\n\ndoc two\n");
    const auto docs = read_documents(in);
    REQUIRE(docs.size() == 2);
    const auto seqs = pack_corpus(v, docs, 16);
    CHECK(seqs.size() == 2);
    CHECK(seqs[0].doc_index == 0);
    CHECK(seqs[1].doc_index == 1);
  }

  SUBCASE("max_len below 8 is rejected") {
    CHECK_THROWS_AS(pack_corpus(v, {"a"}, 4), std::invalid_argument);
  }
}

TEST_CASE("every packed sequence has exactly one CLS and one SEP, PAD only as suffix") {
  const std::string corpus = "one two three four five six seven eight nine ten\n\nshort doc";
  Vocab v = train_bpe(corpus, 120);
  std::istringstream in(corpus);
  const auto seqs = pack_corpus(v, in, 16);
  for (const auto& s : seqs) {
    CHECK(s.ids.size() == 16);
    CHECK(s.ids[0] == Vocab::kCls);
    size_t sep_count = 0;
    bool in_pad = false;
    for (size_t i = 1; i < s.ids.size(); ++i) {
      if (s.ids[i] == Vocab::kSep) {
        ++sep_count;
        CHECK(!in_pad);
      } else if (s.ids[i] == Vocab::kPad) {
        in_pad = true;
      } else {
        CHECK(!in_pad);
        CHECK(s.ids[i] != Vocab::kCls);
      }
    }
    CHECK(sep_count == 1);
  }
}
