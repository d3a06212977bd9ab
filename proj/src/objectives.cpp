#include "bertlab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace bertlab {

namespace {

uint64_t corruption_stream(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kMlm:
      return stream::kMlm;
    case ObjectiveKind::kSr:
      return stream::kSr;
    case ObjectiveKind::kFirstChar:
      return stream::kFirstChar;
    case ObjectiveKind::kAscii:
      return stream::kAscii;
    case ObjectiveKind::kRandom:
      return stream::kRandomCorrupt;
  }
  throw std::logic_error("unknown objective");
}

DetRng example_rng(ObjectiveKind kind, const PackedSequence& seq, uint64_t master_seed) {
  return DetRng(
      derive_seed(master_seed, corruption_stream(kind), seq.doc_index, seq.seq_index));
}

std::vector<size_t> non_special_positions(const PackedSequence& seq) {
  std::vector<size_t> out;
  for (size_t i = 0; i < seq.ids.size(); ++i) {
    if (!Vocab::is_special(seq.ids[i])) out.push_back(i);
  }
  return out;
}

// First k of a partial Fisher-Yates over the candidates, sorted.
std::vector<size_t> sample_without_replacement(std::vector<size_t> candidates, size_t k,
                                               DetRng& rng) {
  for (size_t i = 0; i < k; ++i) {
    const size_t j = i + static_cast<size_t>(rng.below(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(k);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

int32_t random_non_special_id(const Vocab& vocab, DetRng& rng) {
  const int32_t n = vocab.size() - Vocab::kNumSpecials;
  if (n <= 0) throw std::runtime_error("vocab has no non-special tokens");
  return Vocab::kNumSpecials + static_cast<int32_t>(rng.below(static_cast<uint64_t>(n)));
}

TrainingExample blank_example(const PackedSequence& seq, ObjectiveKind kind) {
  TrainingExample ex;
  ex.objective = kind;
  ex.doc_index = seq.doc_index;
  ex.seq_index = seq.seq_index;
  ex.input_ids = seq.ids;
  ex.labels.assign(seq.ids.size(), kIgnoreLabel);
  ex.loss_mask.assign(seq.ids.size(), 0);
  return ex;
}

// Masked-token objectives share selection and corruption; only the label
// function differs.
template <typename LabelFn>
TrainingExample make_masked_token_example(ObjectiveKind kind, const PackedSequence& seq,
                                          const Vocab& vocab, uint64_t master_seed,
                                          LabelFn&& label_at) {
  DetRng rng = example_rng(kind, seq, master_seed);
  const auto positions = select_positions(seq, 0.15, rng);
  auto [input_ids, plan] = corrupt_mlm_style(seq, positions, vocab, rng);

  TrainingExample ex = blank_example(seq, kind);
  ex.input_ids = std::move(input_ids);
  for (const size_t p : plan.selected) {
    ex.labels[p] = label_at(p);
    ex.loss_mask[p] = 1;
  }
  return ex;
}

}  // namespace

std::string objective_name(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kMlm:
      return "mlm";
    case ObjectiveKind::kSr:
      return "sr";
    case ObjectiveKind::kFirstChar:
      return "first-char";
    case ObjectiveKind::kAscii:
      return "ascii";
    case ObjectiveKind::kRandom:
      return "random";
  }
  throw std::logic_error("unknown objective");
}

ObjectiveKind objective_from_name(const std::string& name) {
  if (name == "mlm") return ObjectiveKind::kMlm;
  if (name == "sr") return ObjectiveKind::kSr;
  if (name == "first-char") return ObjectiveKind::kFirstChar;
  if (name == "ascii") return ObjectiveKind::kAscii;
  if (name == "random") return ObjectiveKind::kRandom;
  throw std::runtime_error("unknown objective: " + name +
                           " (expected mlm, sr, first-char, ascii, or random)");
}

int32_t label_space_size(ObjectiveKind kind, int32_t vocab_size) {
  switch (kind) {
    case ObjectiveKind::kMlm:
      return vocab_size;
    case ObjectiveKind::kSr:
      return 3;
    case ObjectiveKind::kFirstChar:
      return kFirstCharClasses;
    case ObjectiveKind::kAscii:
      return kAsciiClasses;
    case ObjectiveKind::kRandom:
      return kRandomClasses;
  }
  throw std::logic_error("unknown objective");
}

std::vector<size_t> select_positions(const PackedSequence& seq, double rate, DetRng& rng) {
  if (!(rate > 0.0 && rate < 1.0)) {
    throw std::invalid_argument("select_positions: rate must be in (0, 1)");
  }
  auto candidates = non_special_positions(seq);
  if (candidates.empty()) throw std::runtime_error("nothing to select");
  const size_t n = candidates.size();
  const size_t k =
      std::max<size_t>(1, static_cast<size_t>(std::llround(rate * static_cast<double>(n))));
  return sample_without_replacement(std::move(candidates), std::min(k, n), rng);
}

std::pair<std::vector<int32_t>, CorruptionPlan> corrupt_mlm_style(
    const PackedSequence& seq, const std::vector<size_t>& positions, const Vocab& vocab,
    DetRng& rng) {
  std::vector<int32_t> input_ids = seq.ids;
  CorruptionPlan plan;
  plan.selected = positions;
  plan.actions.reserve(positions.size());
  for (const size_t p : positions) {
    const double u = rng.real01();
    if (u < 0.8) {
      input_ids[p] = Vocab::kMask;
      plan.actions.push_back(CorruptAction::kToMask);
    } else if (u < 0.9) {
      input_ids[p] = random_non_special_id(vocab, rng);
      plan.actions.push_back(CorruptAction::kToRandom);
    } else {
      plan.actions.push_back(CorruptAction::kKeep);
    }
  }
  return {std::move(input_ids), std::move(plan)};
}

int32_t first_char_class(std::string_view surface) {
  if (surface.empty()) throw std::invalid_argument("first_char_class: empty surface");
  uint32_t cp = utf8_first_codepoint(surface);
  if (cp >= 'A' && cp <= 'Z') cp = cp - 'A' + 'a';
  if (cp >= 'a' && cp <= 'z') return static_cast<int32_t>(cp - 'a');
  if (cp >= '0' && cp <= '9') return 26;
  static const std::string punct = R"(!"#$%&'()*+,-./:;<=>?@[\]^_`{|}~)";
  if (cp < 128 && punct.find(static_cast<char>(cp)) != std::string::npos) return 27;
  return 28;
}

int32_t ascii_class(std::string_view surface) {
  if (surface.empty()) throw std::invalid_argument("ascii_class: empty surface");
  uint64_t sum = 0;
  for (const auto& ch : utf8_chars(surface)) {
    sum += utf8_first_codepoint(ch);
  }
  return static_cast<int32_t>(sum % 5);
}

TrainingExample make_mlm(const PackedSequence& seq, const Vocab& vocab, uint64_t master_seed) {
  return make_masked_token_example(ObjectiveKind::kMlm, seq, vocab, master_seed,
                                   [&](size_t p) { return seq.ids[p]; });
}

TrainingExample make_first_char(const PackedSequence& seq, const Vocab& vocab,
                                uint64_t master_seed) {
  return make_masked_token_example(ObjectiveKind::kFirstChar, seq, vocab, master_seed,
                                   [&](size_t p) {
                                     return first_char_class(token_surface(vocab, seq.ids[p]));
                                   });
}

TrainingExample make_ascii(const PackedSequence& seq, const Vocab& vocab, uint64_t master_seed) {
  return make_masked_token_example(ObjectiveKind::kAscii, seq, vocab, master_seed, [&](size_t p) {
    return ascii_class(token_surface(vocab, seq.ids[p]));
  });
}

TrainingExample make_random(const PackedSequence& seq, const Vocab& vocab, uint64_t master_seed,
                            std::optional<uint64_t> resample_epoch) {
  const size_t capacity = seq.ids.size() - 2;
  return make_masked_token_example(ObjectiveKind::kRandom, seq, vocab, master_seed,
                                   [&](size_t p) {
                                     // Absolute token offset within the document; position 0 in
                                     // the sequence is CLS.
                                     const uint64_t abs_pos =
                                         seq.seq_index * capacity + (p - 1);
                                     uint64_t s = derive_seed(master_seed, stream::kRandomLabel,
                                                              seq.doc_index, abs_pos);
                                     if (resample_epoch) s = splitmix64(s ^ *resample_epoch);
                                     return static_cast<int32_t>(s % kRandomClasses);
                                   });
}

TrainingExample make_sr(const PackedSequence& seq, const Vocab& vocab, uint64_t master_seed) {
  DetRng rng = example_rng(ObjectiveKind::kSr, seq, master_seed);
  auto candidates = non_special_positions(seq);
  const size_t n = candidates.size();
  if (n < 4) throw std::runtime_error("sequence too short for S+R");

  const size_t k =
      std::max<size_t>(1, static_cast<size_t>(std::llround(0.10 * static_cast<double>(n))));

  // One draw of 2k distinct positions; first k shuffle, next k randomize.
  std::vector<size_t> drawn = candidates;
  for (size_t i = 0; i < 2 * k; ++i) {
    const size_t j = i + static_cast<size_t>(rng.below(drawn.size() - i));
    std::swap(drawn[i], drawn[j]);
  }
  CorruptionPlan plan;
  plan.shuffle_positions.assign(drawn.begin(), drawn.begin() + static_cast<long>(k));
  plan.randomize_positions.assign(drawn.begin() + static_cast<long>(k),
                                  drawn.begin() + static_cast<long>(2 * k));
  std::sort(plan.shuffle_positions.begin(), plan.shuffle_positions.end());
  std::sort(plan.randomize_positions.begin(), plan.randomize_positions.end());

  TrainingExample ex = blank_example(seq, ObjectiveKind::kSr);
  for (const size_t p : candidates) {
    ex.labels[p] = kSrIntact;
    ex.loss_mask[p] = 1;
  }

  if (k >= 2) {
    // Seeded derangement: resample the permutation until it has no fixed point.
    std::vector<size_t> perm(k);
    for (;;) {
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      bool fixed = false;
      for (size_t i = 0; i < k; ++i) {
        if (perm[i] == i) {
          fixed = true;
          break;
        }
      }
      if (!fixed) break;
    }
    std::vector<int32_t> original(k);
    for (size_t i = 0; i < k; ++i) original[i] = seq.ids[plan.shuffle_positions[i]];
    for (size_t i = 0; i < k; ++i) {
      ex.input_ids[plan.shuffle_positions[i]] = original[perm[i]];
      ex.labels[plan.shuffle_positions[i]] = kSrShuffled;
    }
    plan.shuffle_perm = std::move(perm);
  } else {
    // A single shuffle slot cannot be deranged in place: swap it with a
    // uniformly chosen unselected non-special position, which then also
    // counts as shuffled.
    std::vector<size_t> pool;
    for (const size_t p : candidates) {
      if (p != plan.shuffle_positions[0] &&
          !std::binary_search(plan.randomize_positions.begin(), plan.randomize_positions.end(),
                              p)) {
        pool.push_back(p);
      }
    }
    if (pool.empty()) throw std::runtime_error("sequence too short for S+R");
    const size_t partner = pool[static_cast<size_t>(rng.below(pool.size()))];
    const size_t own = plan.shuffle_positions[0];
    std::swap(ex.input_ids[own], ex.input_ids[partner]);
    ex.labels[own] = kSrShuffled;
    ex.labels[partner] = kSrShuffled;
    plan.shuffle_perm = {0};
  }

  for (const size_t p : plan.randomize_positions) {
    ex.input_ids[p] = random_non_special_id(vocab, rng);
    ex.labels[p] = kSrRandom;
  }

  plan.selected = plan.shuffle_positions;
  plan.selected.insert(plan.selected.end(), plan.randomize_positions.begin(),
                       plan.randomize_positions.end());
  std::sort(plan.selected.begin(), plan.selected.end());
  return ex;
}

TrainingExample make_example(ObjectiveKind kind, const PackedSequence& seq, const Vocab& vocab,
                             uint64_t master_seed) {
  switch (kind) {
    case ObjectiveKind::kMlm:
      return make_mlm(seq, vocab, master_seed);
    case ObjectiveKind::kSr:
      return make_sr(seq, vocab, master_seed);
    case ObjectiveKind::kFirstChar:
      return make_first_char(seq, vocab, master_seed);
    case ObjectiveKind::kAscii:
      return make_ascii(seq, vocab, master_seed);
    case ObjectiveKind::kRandom:
      return make_random(seq, vocab, master_seed);
  }
  throw std::logic_error("unknown objective");
}

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const std::string& data, size_t& pos) {
  if (pos + sizeof(T) > data.size()) throw std::runtime_error("truncated shard record");
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return static_cast<T>(v);
}

}  // namespace

void write_shard(const std::string& path_base, const ShardManifest& manifest,
                 const std::vector<TrainingExample>& examples) {
  nlohmann::json j;
  j["objective"] = manifest.objective;
  j["master_seed"] = manifest.master_seed;
  j["vocab_hash"] = manifest.vocab_hash;
  j["max_len"] = manifest.max_len;
  j["record_count"] = examples.size();

  std::string bin;
  for (const auto& ex : examples) {
    if (ex.input_ids.size() != manifest.max_len) {
      throw std::runtime_error("shard record length does not match manifest max_len");
    }
    std::string rec;
    put_le<uint64_t>(rec, ex.doc_index);
    put_le<uint64_t>(rec, ex.seq_index);
    for (const int32_t v : ex.input_ids) put_le<uint32_t>(rec, static_cast<uint32_t>(v));
    for (const int32_t v : ex.labels) put_le<int32_t>(rec, v);
    for (const uint8_t v : ex.loss_mask) rec.push_back(static_cast<char>(v));
    rec.push_back(static_cast<char>(ex.objective));
    put_le<uint32_t>(bin, static_cast<uint32_t>(rec.size()));
    bin += rec;
  }

  std::ofstream mout(path_base + ".manifest.json", std::ios::binary);
  if (!mout) throw std::runtime_error("cannot write shard manifest: " + path_base);
  mout << j.dump();
  std::ofstream bout(path_base + ".records.bin", std::ios::binary);
  if (!bout) throw std::runtime_error("cannot write shard records: " + path_base);
  bout.write(bin.data(), static_cast<std::streamsize>(bin.size()));
}

std::pair<ShardManifest, std::vector<TrainingExample>> read_shard(const std::string& path_base) {
  std::ifstream min(path_base + ".manifest.json", std::ios::binary);
  if (!min) throw std::runtime_error("cannot read shard manifest: " + path_base);
  nlohmann::json j = nlohmann::json::parse(min, nullptr, /*allow_exceptions=*/true);

  ShardManifest manifest;
  manifest.objective = j.at("objective").get<std::string>();
  manifest.master_seed = j.at("master_seed").get<uint64_t>();
  manifest.vocab_hash = j.at("vocab_hash").get<std::string>();
  manifest.max_len = j.at("max_len").get<uint32_t>();
  manifest.record_count = j.at("record_count").get<uint64_t>();

  std::ifstream bin_in(path_base + ".records.bin", std::ios::binary);
  if (!bin_in) throw std::runtime_error("cannot read shard records: " + path_base);
  std::string data((std::istreambuf_iterator<char>(bin_in)), std::istreambuf_iterator<char>());

  std::vector<TrainingExample> examples;
  examples.reserve(manifest.record_count);
  size_t pos = 0;
  const ObjectiveKind kind = objective_from_name(manifest.objective);
  while (pos < data.size()) {
    const uint32_t len = get_le<uint32_t>(data, pos);
    const size_t end = pos + len;
    if (end > data.size()) throw std::runtime_error("truncated shard record");
    TrainingExample ex;
    ex.doc_index = get_le<uint64_t>(data, pos);
    ex.seq_index = get_le<uint64_t>(data, pos);
    ex.input_ids.resize(manifest.max_len);
    for (auto& v : ex.input_ids) v = static_cast<int32_t>(get_le<uint32_t>(data, pos));
    ex.labels.resize(manifest.max_len);
    for (auto& v : ex.labels) v = get_le<int32_t>(data, pos);
    ex.loss_mask.resize(manifest.max_len);
    for (auto& v : ex.loss_mask) v = static_cast<uint8_t>(get_le<uint8_t>(data, pos));
    ex.objective = static_cast<ObjectiveKind>(get_le<uint8_t>(data, pos));
    if (ex.objective != kind) throw std::runtime_error("shard record objective mismatch");
    if (pos != end) throw std::runtime_error("malformed shard record length");
    examples.push_back(std::move(ex));
  }
  if (examples.size() != manifest.record_count) {
    throw std::runtime_error("shard record count mismatch: manifest says " +
                             std::to_string(manifest.record_count) + ", file has " +
                             std::to_string(examples.size()));
  }
  return {manifest, std::move(examples)};
}

}  // namespace bertlab
