#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bertlab/packing.hpp"
#include "bertlab/rng.hpp"
#include "bertlab/vocab.hpp"

namespace bertlab {

// The five pre-training objectives. MLM and S+R are linguistically motivated;
// FirstChar, Ascii and Random are not.
enum class ObjectiveKind : uint8_t {
  kMlm = 0,
  kSr = 1,
  kFirstChar = 2,
  kAscii = 3,
  kRandom = 4,
};

// CLI / file-format names: mlm, sr, first-char, ascii, random.
std::string objective_name(ObjectiveKind kind);
ObjectiveKind objective_from_name(const std::string& name);

// Label-space size per objective. MLM predicts over the vocabulary, so it
// needs the vocab size; the rest are fixed.
int32_t label_space_size(ObjectiveKind kind, int32_t vocab_size);

inline constexpr int32_t kIgnoreLabel = -1;

// S+R label values.
inline constexpr int32_t kSrIntact = 0;
inline constexpr int32_t kSrShuffled = 1;
inline constexpr int32_t kSrRandom = 2;

enum class CorruptAction : uint8_t { kToMask = 0, kToRandom = 1, kKeep = 2 };

struct CorruptionPlan {
  std::vector<size_t> selected;         // sorted, non-special positions
  std::vector<CorruptAction> actions;   // parallel to selected (masked-token objectives)
  std::vector<size_t> shuffle_positions;    // S+R only, sorted
  std::vector<size_t> randomize_positions;  // S+R only, sorted
  std::vector<size_t> shuffle_perm;  // S+R: token at shuffle_positions[i] came from
                                     // shuffle_positions[shuffle_perm[i]]
};

struct TrainingExample {
  std::vector<int32_t> input_ids;
  std::vector<int32_t> labels;     // kIgnoreLabel wherever loss_mask is 0
  std::vector<uint8_t> loss_mask;  // 1 where the loss is computed
  ObjectiveKind objective = ObjectiveKind::kMlm;
  uint64_t doc_index = 0;
  uint64_t seq_index = 0;
};

// Exactly max(1, round(rate * n)) distinct non-special positions, uniform
// without replacement, returned sorted. n counts non-special tokens.
std::vector<size_t> select_positions(const PackedSequence& seq, double rate, DetRng& rng);

// BERT-style corruption of the selected positions: 80% -> MASK, 10% -> a
// uniformly drawn non-special vocab id, 10% unchanged.
std::pair<std::vector<int32_t>, CorruptionPlan> corrupt_mlm_style(
    const PackedSequence& seq, const std::vector<size_t>& positions, const Vocab& vocab,
    DetRng& rng);

// First-character class of a marker-stripped surface: 'a'..'z' -> 0..25,
// digit -> 26, ASCII punctuation -> 27, anything else -> 28.
int32_t first_char_class(std::string_view surface);
inline constexpr int32_t kFirstCharClasses = 29;

// Sum of the surface's code points, modulo 5.
int32_t ascii_class(std::string_view surface);
inline constexpr int32_t kAsciiClasses = 5;
inline constexpr int32_t kRandomClasses = 5;

// Objective generators. Each example is a pure function of
// (master_seed, doc_index, seq_index), so generation order is free.
TrainingExample make_mlm(const PackedSequence& seq, const Vocab& vocab, uint64_t master_seed);
TrainingExample make_sr(const PackedSequence& seq, const Vocab& vocab, uint64_t master_seed);
TrainingExample make_first_char(const PackedSequence& seq, const Vocab& vocab,
                                uint64_t master_seed);
TrainingExample make_ascii(const PackedSequence& seq, const Vocab& vocab, uint64_t master_seed);

// Random labels are keyed on (master_seed, doc_index, absolute token position)
// so a corpus position keeps its label across epochs and sequence boundaries.
// resample_epoch switches to per-epoch labels (a pure-noise diagnostic mode).
TrainingExample make_random(const PackedSequence& seq, const Vocab& vocab, uint64_t master_seed,
                            std::optional<uint64_t> resample_epoch = std::nullopt);

TrainingExample make_example(ObjectiveKind kind, const PackedSequence& seq, const Vocab& vocab,
                             uint64_t master_seed);

// Shard files: a JSON manifest next to length-prefixed little-endian records.
struct ShardManifest {
  std::string objective;
  uint64_t master_seed = 0;
  std::string vocab_hash;
  uint32_t max_len = 0;
  uint64_t record_count = 0;
};

// Writes <path_base>.manifest.json and <path_base>.records.bin.
void write_shard(const std::string& path_base, const ShardManifest& manifest,
                 const std::vector<TrainingExample>& examples);
std::pair<ShardManifest, std::vector<TrainingExample>> read_shard(const std::string& path_base);

}  // namespace bertlab
