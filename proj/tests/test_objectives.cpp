#include <algorithm>
#include <map>
#include <set>
#include <string>

#include "bertlab/objectives.hpp"
#include "bertlab/packing.hpp"
#include "bertlab/rng.hpp"
#include "bertlab/vocab.hpp"
#include "doctest.h"

using namespace bertlab;

namespace {

// Vocab with plenty of simple word tokens for corruption draws.
Vocab test_vocab() {
  std::string corpus;
  for (char a = 'a'; a <= 'z'; ++a) {
    for (char b = 'a'; b <= 'e'; ++b) {
      corpus += a;
      corpus += b;
      corpus += ' ';
    }
  }
  corpus += "0 1 2 3 4 5 6 7 8 9 . , !";
  return train_bpe(corpus, 512);
}

// A packed sequence with exactly n non-special content tokens.
PackedSequence sequence_with_n_tokens(const Vocab& vocab, size_t n, uint64_t doc = 0,
                                      uint64_t seq = 0, size_t pad = 2) {
  PackedSequence s;
  s.doc_index = doc;
  s.seq_index = seq;
  s.ids.push_back(Vocab::kCls);
  int32_t id = Vocab::kNumSpecials;
  for (size_t i = 0; i < n; ++i) {
    s.ids.push_back(id);
    id = Vocab::kNumSpecials + (id + 1 - Vocab::kNumSpecials) % (vocab.size() - Vocab::kNumSpecials);
  }
  s.ids.push_back(Vocab::kSep);
  s.ids.resize(s.ids.size() + pad, Vocab::kPad);
  return s;
}

size_t count_mask(const TrainingExample& ex) {
  size_t c = 0;
  for (const auto m : ex.loss_mask) c += m;
  return c;
}

}  // namespace

TEST_CASE("select_positions returns exactly max(1, round(rate*n)) distinct non-specials") {
  const Vocab vocab = test_vocab();

  SUBCASE("n=100 rate=0.15 gives exactly 15") {
    const auto seq = sequence_with_n_tokens(vocab, 100);
    DetRng rng(7);
    const auto pos = select_positions(seq, 0.15, rng);
    CHECK(pos.size() == 15);
    std::set<size_t> uniq(pos.begin(), pos.end());
    CHECK(uniq.size() == 15);
    for (const auto p : pos) CHECK(!Vocab::is_special(seq.ids[p]));
  }

  SUBCASE("n=3 rate=0.10 floors at 1") {
    const auto seq = sequence_with_n_tokens(vocab, 3);
    DetRng rng(7);
    CHECK(select_positions(seq, 0.10, rng).size() == 1);
  }

  SUBCASE("sequence of only specials errors") {
    PackedSequence s;
    s.ids = {Vocab::kCls, Vocab::kSep, Vocab::kPad, Vocab::kPad};
    DetRng rng(7);
    CHECK_THROWS_WITH_AS(select_positions(s, 0.15, rng), "nothing to select",
                         std::runtime_error);
  }

  SUBCASE("rate outside (0,1) is rejected") {
    const auto seq = sequence_with_n_tokens(vocab, 10);
    DetRng rng(7);
    CHECK_THROWS_AS(select_positions(seq, 0.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(select_positions(seq, 1.0, rng), std::invalid_argument);
  }

  SUBCASE("selection is uniform-ish across positions") {
    const auto seq = sequence_with_n_tokens(vocab, 20);
    DetRng rng(99);
    std::map<size_t, int> hits;
    const int trials = 20000;
    for (int t = 0; t < trials; ++t) {
      for (const auto p : select_positions(seq, 0.15, rng)) hits[p]++;
    }
    // 3 of 20 positions per trial -> expected hits = trials * 0.15.
    for (const auto& [p, h] : hits) {
      CHECK(h > trials * 0.15 * 0.9);
      CHECK(h < trials * 0.15 * 1.1);
    }
  }
}

TEST_CASE("corrupt_mlm_style action fractions approach 80/10/10") {
  const Vocab vocab = test_vocab();
  const auto seq = sequence_with_n_tokens(vocab, 100);
  DetRng rng(42);
  size_t mask = 0, random = 0, keep = 0, total = 0;
  while (total < 10000) {
    const auto pos = select_positions(seq, 0.15, rng);
    const auto [ids, plan] = corrupt_mlm_style(seq, pos, vocab, rng);
    for (size_t i = 0; i < plan.selected.size(); ++i) {
      switch (plan.actions[i]) {
        case CorruptAction::kToMask:
          CHECK(ids[plan.selected[i]] == Vocab::kMask);
          ++mask;
          break;
        case CorruptAction::kToRandom:
          CHECK(!Vocab::is_special(ids[plan.selected[i]]));
          ++random;
          break;
        case CorruptAction::kKeep:
          CHECK(ids[plan.selected[i]] == seq.ids[plan.selected[i]]);
          ++keep;
          break;
      }
    }
    total += plan.selected.size();
  }
  const double n = static_cast<double>(total);
  CHECK(mask / n == doctest::Approx(0.80).epsilon(0.015));
  CHECK(random / n == doctest::Approx(0.10).epsilon(0.12));
  CHECK(keep / n == doctest::Approx(0.10).epsilon(0.12));
}

TEST_CASE("corrupt_mlm_style with no positions is the identity") {
  const Vocab vocab = test_vocab();
  const auto seq = sequence_with_n_tokens(vocab, 12);
  DetRng rng(1);
  const auto [ids, plan] = corrupt_mlm_style(seq, {}, vocab, rng);
  CHECK(ids == seq.ids);
  CHECK(plan.selected.empty());
}

TEST_CASE("make_mlm labels original ids exactly at selected positions") {
  const Vocab vocab = test_vocab();
  const auto seq = sequence_with_n_tokens(vocab, 100);
  const auto ex = make_mlm(seq, vocab, 2024);

  CHECK(count_mask(ex) == 15);
  for (size_t i = 0; i < ex.labels.size(); ++i) {
    if (ex.loss_mask[i]) {
      CHECK(ex.labels[i] == seq.ids[i]);  // label is the original id, even for KEEP
      CHECK(!Vocab::is_special(seq.ids[i]));
    } else {
      CHECK(ex.labels[i] == kIgnoreLabel);
      CHECK(ex.input_ids[i] == seq.ids[i]);  // untouched outside the plan
    }
  }
}

TEST_CASE("generation is a pure function of (master_seed, doc, seq)") {
  const Vocab vocab = test_vocab();
  const auto seq = sequence_with_n_tokens(vocab, 64, /*doc=*/3, /*seq=*/5);
  for (const auto kind : {ObjectiveKind::kMlm, ObjectiveKind::kSr, ObjectiveKind::kFirstChar,
                          ObjectiveKind::kAscii, ObjectiveKind::kRandom}) {
    const auto a = make_example(kind, seq, vocab, 77);
    const auto b = make_example(kind, seq, vocab, 77);
    CHECK(a.input_ids == b.input_ids);
    CHECK(a.labels == b.labels);
    CHECK(a.loss_mask == b.loss_mask);
    const auto c = make_example(kind, seq, vocab, 78);
    CHECK(a.input_ids != c.input_ids);
  }
}

TEST_CASE("corruption never touches CLS/SEP/PAD") {
  const Vocab vocab = test_vocab();
  for (uint64_t master = 0; master < 50; ++master) {
    const auto seq = sequence_with_n_tokens(vocab, 20, master, 0, 6);
    for (const auto kind : {ObjectiveKind::kMlm, ObjectiveKind::kSr, ObjectiveKind::kRandom}) {
      const auto ex = make_example(kind, seq, vocab, master);
      for (size_t i = 0; i < seq.ids.size(); ++i) {
        if (Vocab::is_special(seq.ids[i])) {
          CHECK(ex.input_ids[i] == seq.ids[i]);
          CHECK(ex.loss_mask[i] == 0);
          CHECK(ex.labels[i] == kIgnoreLabel);
        }
      }
    }
  }
}

TEST_CASE("make_sr structure") {
  const Vocab vocab = test_vocab();

  SUBCASE("n=100 gives 10 shuffled, 10 random, 80 intact") {
    const auto seq = sequence_with_n_tokens(vocab, 100);
    const auto ex = make_sr(seq, vocab, 5);
    std::map<int32_t, int> hist;
    size_t supervised = 0;
    for (size_t i = 0; i < ex.labels.size(); ++i) {
      if (ex.loss_mask[i]) {
        ++supervised;
        hist[ex.labels[i]]++;
      }
    }
    CHECK(supervised == 100);
    CHECK(hist[kSrShuffled] == 10);
    CHECK(hist[kSrRandom] == 10);
    CHECK(hist[kSrIntact] == 80);
  }

  SUBCASE("token multiset differs only at randomize positions") {
    const auto seq = sequence_with_n_tokens(vocab, 50);
    const auto ex = make_sr(seq, vocab, 11);
    std::multiset<int32_t> before, after;
    for (size_t i = 0; i < seq.ids.size(); ++i) {
      if (ex.labels[i] == kSrRandom) continue;
      before.insert(seq.ids[i]);
      after.insert(ex.input_ids[i]);
    }
    CHECK(before == after);
  }

  SUBCASE("short sequences error") {
    const auto seq = sequence_with_n_tokens(vocab, 3);
    CHECK_THROWS_WITH_AS(make_sr(seq, vocab, 1), "sequence too short for S+R",
                         std::runtime_error);
  }

  SUBCASE("loss over every non-special position") {
    const auto seq = sequence_with_n_tokens(vocab, 40, 0, 0, 7);
    const auto ex = make_sr(seq, vocab, 9);
    for (size_t i = 0; i < seq.ids.size(); ++i) {
      CHECK(ex.loss_mask[i] == (Vocab::is_special(seq.ids[i]) ? 0 : 1));
    }
  }

  SUBCASE("singleton shuffle set swaps with a partner that is also labeled shuffled") {
    // n in [4, 14] keeps round(0.1 n) at 1.
    const auto seq = sequence_with_n_tokens(vocab, 8);
    const auto ex = make_sr(seq, vocab, 3);
    std::vector<size_t> shuffled;
    for (size_t i = 0; i < ex.labels.size(); ++i) {
      if (ex.labels[i] == kSrShuffled) shuffled.push_back(i);
    }
    CHECK(shuffled.size() == 2);
    // The pair swapped tokens.
    CHECK(ex.input_ids[shuffled[0]] == seq.ids[shuffled[1]]);
    CHECK(ex.input_ids[shuffled[1]] == seq.ids[shuffled[0]]);
  }
}

TEST_CASE("sr derangement has no fixed points for shuffle sets >= 2") {
  const Vocab vocab = test_vocab();
  for (uint64_t master = 0; master < 200; ++master) {
    const auto seq = sequence_with_n_tokens(vocab, 30, master);  // k = 3
    const auto ex = make_sr(seq, vocab, master);
    // Content ids here are distinct within a window of vocab cycle > 30, so a
    // value-level check detects positional fixed points.
    for (size_t i = 0; i < ex.labels.size(); ++i) {
      if (ex.labels[i] == kSrShuffled) {
        CHECK(ex.input_ids[i] != seq.ids[i]);
      }
    }
  }
}

TEST_CASE("first_char_class maps per the fixed 29-class table") {
  CHECK(first_char_class("cat") == 2);
  CHECK(first_char_class("Cat") == 2);
  CHECK(first_char_class("zebra") == 25);
  CHECK(first_char_class("a") == 0);
  CHECK(first_char_class("42nd") == 26);
  CHECK(first_char_class("9") == 26);
  CHECK(first_char_class("!bang") == 27);
  CHECK(first_char_class("~") == 27);
  CHECK(first_char_class("émigré") == 28);
  CHECK(first_char_class("\xC3\xA9") == 28);  // é
  CHECK_THROWS_AS(first_char_class(""), std::invalid_argument);
}

TEST_CASE("ascii_class sums code points modulo 5") {
  // Oracle: independent sums from the character code table.
  CHECK(ascii_class("cat") == (99 + 97 + 116) % 5);
  CHECK(ascii_class("cat") == 2);
  CHECK(ascii_class("a") == 97 % 5);
  CHECK(ascii_class("a") == 2);
  CHECK(ascii_class("zz") == (122 + 122) % 5);
  // Non-ASCII goes through code points: é is U+00E9 = 233.
  CHECK(ascii_class("\xC3\xA9") == 233 % 5);
  CHECK_THROWS_AS(ascii_class(""), std::invalid_argument);
}

TEST_CASE("make_first_char labels come from the original surfaces") {
  const Vocab vocab = test_vocab();
  const auto seq = sequence_with_n_tokens(vocab, 100);
  const auto ex = make_first_char(seq, vocab, 31);
  CHECK(count_mask(ex) == 15);
  for (size_t i = 0; i < ex.labels.size(); ++i) {
    if (ex.loss_mask[i]) {
      CHECK(ex.labels[i] == first_char_class(token_surface(vocab, seq.ids[i])));
      CHECK(ex.labels[i] >= 0);
      CHECK(ex.labels[i] < kFirstCharClasses);
    }
  }
}

TEST_CASE("make_ascii labels stay in 0..4 and match the oracle") {
  const Vocab vocab = test_vocab();
  const auto seq = sequence_with_n_tokens(vocab, 100);
  const auto ex = make_ascii(seq, vocab, 13);
  for (size_t i = 0; i < ex.labels.size(); ++i) {
    if (ex.loss_mask[i]) {
      CHECK(ex.labels[i] == ascii_class(token_surface(vocab, seq.ids[i])));
      CHECK(ex.labels[i] >= 0);
      CHECK(ex.labels[i] < kAsciiClasses);
    } else {
      CHECK(ex.labels[i] == kIgnoreLabel);
    }
  }
}

TEST_CASE("random labels are fixed per corpus position and independent of tokens") {
  const Vocab vocab = test_vocab();
  auto seq = sequence_with_n_tokens(vocab, 64, /*doc=*/9, /*seq=*/2);
  const auto a = make_random(seq, vocab, 555);

  // Same call again: bit identical.
  const auto b = make_random(seq, vocab, 555);
  CHECK(a.labels == b.labels);

  // Permute the token identities at fixed positions: labels unchanged.
  auto permuted = seq;
  for (auto& id : permuted.ids) {
    if (!Vocab::is_special(id)) {
      id = Vocab::kNumSpecials +
           (id - Vocab::kNumSpecials + 11) % (vocab.size() - Vocab::kNumSpecials);
    }
  }
  const auto c = make_random(permuted, vocab, 555);
  for (size_t i = 0; i < a.labels.size(); ++i) {
    if (a.loss_mask[i] && c.loss_mask[i]) {
      CHECK(a.labels[i] == c.labels[i]);
    }
  }

  // Resample mode changes labels between epochs.
  const auto e0 = make_random(seq, vocab, 555, 0);
  const auto e1 = make_random(seq, vocab, 555, 1);
  bool any_diff = false;
  for (size_t i = 0; i < e0.labels.size(); ++i) {
    if (e0.loss_mask[i] && e1.loss_mask[i] && e0.labels[i] != e1.labels[i]) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("random label histogram is near-uniform over 0..4") {
  const Vocab vocab = test_vocab();
  std::map<int32_t, size_t> hist;
  size_t total = 0;
  for (uint64_t doc = 0; doc < 700; ++doc) {
    const auto seq = sequence_with_n_tokens(vocab, 100, doc);
    const auto ex = make_random(seq, vocab, 888);
    for (size_t i = 0; i < ex.labels.size(); ++i) {
      if (ex.loss_mask[i]) {
        hist[ex.labels[i]]++;
        ++total;
      }
    }
  }
  CHECK(total >= 10000);
  for (int32_t c = 0; c < 5; ++c) {
    const double frac = static_cast<double>(hist[c]) / static_cast<double>(total);
    CHECK(frac > 0.18);
    CHECK(frac < 0.22);
  }
}

TEST_CASE("rate rule holds exactly for every objective") {
  const Vocab vocab = test_vocab();
  for (const size_t n : {7, 20, 41, 100}) {
    const auto seq = sequence_with_n_tokens(vocab, n);
    const size_t expect_masked =
        std::max<size_t>(1, static_cast<size_t>(std::llround(0.15 * static_cast<double>(n))));
    for (const auto kind : {ObjectiveKind::kMlm, ObjectiveKind::kFirstChar,
                            ObjectiveKind::kAscii, ObjectiveKind::kRandom}) {
      CHECK(count_mask(make_example(kind, seq, vocab, 1)) == expect_masked);
    }
    CHECK(count_mask(make_example(ObjectiveKind::kSr, seq, vocab, 1)) == n);
  }
}

TEST_CASE("shard files round-trip examples and manifest") {
  const Vocab vocab = test_vocab();
  std::vector<TrainingExample> examples;
  for (uint64_t d = 0; d < 4; ++d) {
    examples.push_back(make_mlm(sequence_with_n_tokens(vocab, 20, d), vocab, 17));
  }
  ShardManifest manifest;
  manifest.objective = "mlm";
  manifest.master_seed = 17;
  manifest.vocab_hash = "fnv1a64:deadbeef00000000";
  manifest.max_len = static_cast<uint32_t>(examples[0].input_ids.size());

  const std::string base = "/tmp/bertlab_test_shard";
  write_shard(base, manifest, examples);
  const auto [m2, ex2] = read_shard(base);
  CHECK(m2.objective == "mlm");
  CHECK(m2.master_seed == 17);
  CHECK(m2.record_count == 4);
  REQUIRE(ex2.size() == examples.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    CHECK(ex2[i].input_ids == examples[i].input_ids);
    CHECK(ex2[i].labels == examples[i].labels);
    CHECK(ex2[i].loss_mask == examples[i].loss_mask);
    CHECK(ex2[i].doc_index == examples[i].doc_index);
  }
}

TEST_CASE("objective names round-trip") {
  for (const auto kind : {ObjectiveKind::kMlm, ObjectiveKind::kSr, ObjectiveKind::kFirstChar,
                          ObjectiveKind::kAscii, ObjectiveKind::kRandom}) {
    CHECK(objective_from_name(objective_name(kind)) == kind);
  }
  CHECK_THROWS_AS(objective_from_name("nsp"), std::runtime_error);
}
