#pragma once

#include <cstdint>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace bertlab {

// Byte-pair-encoding subword vocabulary.
//
// Token surfaces are stored with a continuation marker ("##" by default) on
// every piece that does not start a whitespace-delimited span, which is what
// lets decode() rebuild the exact input text. Merge rules, on the other hand,
// are keyed on marker-stripped symbol pairs: one learned rule covers both the
// span-initial and the continuation occurrence of a pair, and pair
// frequencies are pooled across the two forms.
struct Vocab {
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;
  static constexpr int32_t kCls = 2;
  static constexpr int32_t kSep = 3;
  static constexpr int32_t kMask = 4;
  static constexpr int32_t kNumSpecials = 5;

  std::vector<std::string> tokens;  // surface by id; ids 0..4 are the specials
  std::vector<std::pair<std::string, std::string>> merges;  // stripped pairs, learned order
  std::string continuation_marker = "##";
  bool lowercase = true;

  std::unordered_map<std::string, int32_t> token_to_id;
  std::unordered_map<std::string, int32_t> merge_rank;  // key: left + '\x1f' + right

  int32_t size() const { return static_cast<int32_t>(tokens.size()); }
  static bool is_special(int32_t id) { return id >= 0 && id < kNumSpecials; }
  bool is_continuation(int32_t id) const;

  void rebuild_lookup();
};

// Learns a BPE vocabulary from blank-line-delimited plain text.
//
// The alphabet seeds both the plain and the continuation form of every
// character seen in the corpus, so any text over the training character set
// round-trips through encode/decode. Each merge then contributes its plain
// and continuation surfaces (skipping duplicates); learning stops when the
// next merge would exceed vocab_size or no pairs remain.
Vocab train_bpe(std::istream& corpus, int32_t vocab_size,
                const std::string& continuation_marker = "##", bool lowercase = true);
Vocab train_bpe(const std::string& corpus_text, int32_t vocab_size,
                const std::string& continuation_marker = "##", bool lowercase = true);

std::vector<int32_t> encode(const Vocab& vocab, std::string_view text);
std::string decode(const Vocab& vocab, std::span<const int32_t> ids);

// Surface with the continuation marker stripped. Errors on special ids.
std::string token_surface(const Vocab& vocab, int32_t id);

std::string vocab_to_json(const Vocab& vocab);
Vocab vocab_from_json(const std::string& text);
void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

// Pre-tokenization: lowercases (if configured), splits on ASCII whitespace,
// and further splits each span at ASCII punctuation so every punctuation
// character is its own piece. Pieces after the first in a span are flagged as
// attached (they will carry the continuation marker).
struct PreToken {
  std::string text;
  bool attached = false;
};
std::vector<PreToken> pre_tokenize(std::string_view text, bool lowercase);

// Splits UTF-8 text into code-point strings. Invalid bytes pass through as
// single-byte units.
std::vector<std::string> utf8_chars(std::string_view text);

// Code point of the first UTF-8 character, or the raw byte value when the
// byte sequence is malformed.
uint32_t utf8_first_codepoint(std::string_view text);

}  // namespace bertlab
