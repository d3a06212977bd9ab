#include "bertlab/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace bertlab {

namespace {

const char* kSpecialSurfaces[Vocab::kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                     "[MASK]"};

bool is_ascii_punct(char c) {
  static const std::string punct = R"(!"#$%&'()*+,-./:;<=>?@[\]^_`{|}~)";
  return punct.find(c) != std::string::npos;
}

bool is_ascii_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

std::string merge_key(const std::string& left, const std::string& right) {
  return left + '\x1f' + right;
}

// A span's symbol sequence: chunk boundaries block merges, the attached flag
// of the first chunk decides whether its first symbol is marked.
struct Word {
  std::vector<std::string> symbols;  // marked surfaces
  int64_t count = 0;
};

std::string strip_marker(const std::string& s, const std::string& marker) {
  if (!marker.empty() && s.size() > marker.size() && s.compare(0, marker.size(), marker) == 0) {
    return s.substr(marker.size());
  }
  return s;
}

}  // namespace

bool Vocab::is_continuation(int32_t id) const {
  if (is_special(id)) return false;
  const std::string& s = tokens.at(static_cast<size_t>(id));
  return !continuation_marker.empty() && s.size() > continuation_marker.size() &&
         s.compare(0, continuation_marker.size(), continuation_marker) == 0;
}

void Vocab::rebuild_lookup() {
  token_to_id.clear();
  token_to_id.reserve(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) {
    token_to_id.emplace(tokens[i], static_cast<int32_t>(i));
  }
  merge_rank.clear();
  merge_rank.reserve(merges.size());
  for (size_t i = 0; i < merges.size(); ++i) {
    merge_rank.emplace(merge_key(merges[i].first, merges[i].second), static_cast<int32_t>(i));
  }
}

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    const unsigned char b = static_cast<unsigned char>(text[i]);
    size_t len = 1;
    if ((b & 0x80) == 0x00) {
      len = 1;
    } else if ((b & 0xE0) == 0xC0) {
      len = 2;
    } else if ((b & 0xF0) == 0xE0) {
      len = 3;
    } else if ((b & 0xF8) == 0xF0) {
      len = 4;
    }
    if (i + len > text.size()) len = 1;
    // continuation bytes must look like 10xxxxxx, otherwise fall back to 1 byte
    for (size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

uint32_t utf8_first_codepoint(std::string_view text) {
  if (text.empty()) throw std::invalid_argument("utf8_first_codepoint: empty string");
  const unsigned char b0 = static_cast<unsigned char>(text[0]);
  if ((b0 & 0x80) == 0x00) return b0;
  uint32_t cp = 0;
  size_t len = 1;
  if ((b0 & 0xE0) == 0xC0) {
    cp = b0 & 0x1F;
    len = 2;
  } else if ((b0 & 0xF0) == 0xE0) {
    cp = b0 & 0x0F;
    len = 3;
  } else if ((b0 & 0xF8) == 0xF0) {
    cp = b0 & 0x07;
    len = 4;
  } else {
    return b0;  // stray continuation byte
  }
  if (text.size() < len) return b0;
  for (size_t i = 1; i < len; ++i) {
    const unsigned char b = static_cast<unsigned char>(text[i]);
    if ((b & 0xC0) != 0x80) return b0;
    cp = (cp << 6) | (b & 0x3F);
  }
  return cp;
}

std::vector<PreToken> pre_tokenize(std::string_view text, bool lowercase) {
  std::vector<PreToken> out;
  std::string current;
  bool span_started = false;  // have we emitted a chunk for the current span yet
  bool in_span = false;

  auto flush = [&](bool attached) {
    if (!current.empty()) {
      out.push_back(PreToken{current, attached});
      current.clear();
      span_started = true;
    }
  };

  for (size_t i = 0; i < text.size();) {
    char c = text[i];
    if (is_ascii_space(c)) {
      flush(span_started);
      in_span = false;
      span_started = false;
      ++i;
      continue;
    }
    if (!in_span) {
      in_span = true;
      span_started = false;
    }
    if (is_ascii_punct(c)) {
      flush(span_started);
      out.push_back(PreToken{std::string(1, c), span_started});
      span_started = true;
      ++i;
      continue;
    }
    if (lowercase && c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    current.push_back(c);
    ++i;
  }
  flush(span_started);
  return out;
}

namespace {

std::vector<std::string> word_symbols(const PreToken& pt, const std::string& marker) {
  std::vector<std::string> symbols;
  const auto chars = utf8_chars(pt.text);
  symbols.reserve(chars.size());
  for (size_t i = 0; i < chars.size(); ++i) {
    const bool marked = pt.attached || i > 0;
    symbols.push_back(marked ? marker + chars[i] : chars[i]);
  }
  return symbols;
}

// Applies one stripped-pair rule everywhere in a symbol sequence.
void apply_merge(std::vector<std::string>& symbols, const std::string& left,
                 const std::string& right, const std::string& marker) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  size_t i = 0;
  while (i < symbols.size()) {
    if (i + 1 < symbols.size() && strip_marker(symbols[i], marker) == left &&
        strip_marker(symbols[i + 1], marker) == right) {
      out.push_back(symbols[i] + strip_marker(symbols[i + 1], marker));
      i += 2;
    } else {
      out.push_back(symbols[i]);
      ++i;
    }
  }
  symbols = std::move(out);
}

}  // namespace

Vocab train_bpe(const std::string& corpus_text, int32_t vocab_size,
                const std::string& continuation_marker, bool lowercase) {
  std::istringstream in(corpus_text);
  return train_bpe(in, vocab_size, continuation_marker, lowercase);
}

Vocab train_bpe(std::istream& corpus, int32_t vocab_size, const std::string& continuation_marker,
                bool lowercase) {
  // Collect word (chunk) counts. Chunks that differ only in span position are
  // distinct words here because their first symbol is marked differently.
  std::map<std::vector<std::string>, int64_t> word_counts;
  std::set<std::string> alphabet;  // marked and plain single characters
  bool saw_text = false;

  std::string line;
  while (std::getline(corpus, line)) {
    for (const auto& pt : pre_tokenize(line, lowercase)) {
      saw_text = true;
      auto symbols = word_symbols(pt, continuation_marker);
      for (const auto& s : symbols) alphabet.insert(s);
      // Round-trip safety: register both forms of every character.
      for (const auto& ch : utf8_chars(pt.text)) {
        alphabet.insert(ch);
        alphabet.insert(continuation_marker + ch);
      }
      word_counts[std::move(symbols)] += 1;
    }
  }
  if (!saw_text) throw std::runtime_error("empty corpus");

  const int32_t min_size = Vocab::kNumSpecials + static_cast<int32_t>(alphabet.size());
  if (vocab_size < min_size) {
    throw std::runtime_error("vocab_size too small: need at least " + std::to_string(min_size) +
                             " for " + std::to_string(alphabet.size()) +
                             " character tokens plus specials");
  }

  Vocab vocab;
  vocab.continuation_marker = continuation_marker;
  vocab.lowercase = lowercase;
  vocab.tokens.assign(kSpecialSurfaces, kSpecialSurfaces + Vocab::kNumSpecials);
  std::set<std::string> present(vocab.tokens.begin(), vocab.tokens.end());
  for (const auto& s : alphabet) {
    if (present.insert(s).second) vocab.tokens.push_back(s);
  }

  std::vector<Word> words;
  words.reserve(word_counts.size());
  for (auto& [symbols, count] : word_counts) {
    words.push_back(Word{symbols, count});
  }

  while (vocab.size() < vocab_size) {
    // Pair frequencies over stripped surfaces.
    std::map<std::pair<std::string, std::string>, int64_t> pair_counts;
    for (const auto& w : words) {
      for (size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_counts[{strip_marker(w.symbols[i], continuation_marker),
                     strip_marker(w.symbols[i + 1], continuation_marker)}] += w.count;
      }
    }
    if (pair_counts.empty()) break;

    // Highest count wins; ties go to the lexicographically smaller pair
    // (std::map iteration order makes ">" keep the earliest maximum).
    auto best = pair_counts.begin();
    for (auto it = std::next(pair_counts.begin()); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const std::string left = best->first.first;
    const std::string right = best->first.second;
    const std::string merged = left + right;

    // Both surface forms of the merge result enter the vocabulary.
    std::vector<std::string> new_tokens;
    if (!present.count(merged)) new_tokens.push_back(merged);
    const std::string marked = continuation_marker + merged;
    if (!present.count(marked)) new_tokens.push_back(marked);
    if (vocab.size() + static_cast<int32_t>(new_tokens.size()) > vocab_size) break;

    vocab.merges.emplace_back(left, right);
    for (auto& t : new_tokens) {
      present.insert(t);
      vocab.tokens.push_back(t);
    }
    for (auto& w : words) {
      apply_merge(w.symbols, left, right, continuation_marker);
    }
  }

  vocab.rebuild_lookup();
  return vocab;
}

std::vector<int32_t> encode(const Vocab& vocab, std::string_view text) {
  std::vector<int32_t> ids;
  for (const auto& pt : pre_tokenize(text, vocab.lowercase)) {
    auto symbols = word_symbols(pt, vocab.continuation_marker);
    // Repeatedly apply the applicable merge with the lowest learned rank.
    for (;;) {
      int32_t best_rank = INT32_MAX;
      for (size_t i = 0; i + 1 < symbols.size(); ++i) {
        const auto it = vocab.merge_rank.find(
            merge_key(strip_marker(symbols[i], vocab.continuation_marker),
                      strip_marker(symbols[i + 1], vocab.continuation_marker)));
        if (it != vocab.merge_rank.end() && it->second < best_rank) best_rank = it->second;
      }
      if (best_rank == INT32_MAX) break;
      const auto& rule = vocab.merges[static_cast<size_t>(best_rank)];
      apply_merge(symbols, rule.first, rule.second, vocab.continuation_marker);
    }
    for (const auto& s : symbols) {
      const auto it = vocab.token_to_id.find(s);
      ids.push_back(it == vocab.token_to_id.end() ? Vocab::kUnk : it->second);
    }
  }
  return ids;
}

std::string decode(const Vocab& vocab, std::span<const int32_t> ids) {
  std::string out;
  for (const int32_t id : ids) {
    if (id < 0 || id >= vocab.size()) {
      throw std::runtime_error("id out of range: " + std::to_string(id));
    }
    const std::string& surface = vocab.tokens[static_cast<size_t>(id)];
    if (!Vocab::is_special(id) && vocab.is_continuation(id)) {
      out += strip_marker(surface, vocab.continuation_marker);
    } else {
      if (!out.empty()) out += ' ';
      out += surface;
    }
  }
  return out;
}

std::string token_surface(const Vocab& vocab, int32_t id) {
  if (id < 0 || id >= vocab.size()) {
    throw std::runtime_error("id out of range: " + std::to_string(id));
  }
  if (Vocab::is_special(id)) {
    throw std::runtime_error("special token has no surface: " +
                             vocab.tokens[static_cast<size_t>(id)]);
  }
  return strip_marker(vocab.tokens[static_cast<size_t>(id)], vocab.continuation_marker);
}

std::string vocab_to_json(const Vocab& vocab) {
  nlohmann::json j;
  j["continuation_marker"] = vocab.continuation_marker;
  j["lowercase"] = vocab.lowercase;
  j["specials"] = {{"PAD", Vocab::kPad},
                   {"UNK", Vocab::kUnk},
                   {"CLS", Vocab::kCls},
                   {"SEP", Vocab::kSep},
                   {"MASK", Vocab::kMask}};
  j["tokens"] = vocab.tokens;
  auto& merges = j["merges"] = nlohmann::json::array();
  for (const auto& [l, r] : vocab.merges) merges.push_back({l, r});
  return j.dump();
}

Vocab vocab_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Vocab vocab;
  vocab.continuation_marker = j.at("continuation_marker").get<std::string>();
  vocab.lowercase = j.at("lowercase").get<bool>();
  vocab.tokens = j.at("tokens").get<std::vector<std::string>>();
  for (const auto& m : j.at("merges")) {
    vocab.merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
  }
  if (vocab.tokens.size() < Vocab::kNumSpecials) {
    throw std::runtime_error("vocab file missing special tokens");
  }
  vocab.rebuild_lookup();
  return vocab;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocab file: " + path);
  out << vocab_to_json(vocab);
}

Vocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocab file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return vocab_from_json(buf.str());
}

}  // namespace bertlab
