#include "bertlab/synth.hpp"

#include <array>

#include "bertlab/rng.hpp"

namespace bertlab {

namespace {

const std::array<const char*, 48> kNouns = {
    "cat",    "dog",    "bird",   "fish",    "horse",  "tree",    "river",  "stone",
    "house",  "door",   "window", "garden",  "hill",   "cloud",   "rain",   "storm",
    "child",  "farmer", "baker",  "teacher", "doctor", "painter", "sailor", "wagon",
    "bridge", "market", "valley", "village", "city",   "road",    "lamp",   "table",
    "chair",  "basket", "apple",  "bread",   "boat",   "field",   "forest", "path",
    "tower",  "wall",   "gate",   "well",    "mill",   "barn",    "meadow", "brook"};

const std::array<const char*, 28> kVerbs = {
    "sees",    "finds",  "takes",  "carries", "builds", "paints", "opens",
    "closes",  "follows", "watches", "holds",  "moves",  "lifts",  "pushes",
    "pulls",   "crosses", "visits", "cleans",  "fills",  "mends",  "guards",
    "passes",  "reaches", "leaves", "greets",  "counts", "trades", "shares"};

const std::array<const char*, 18> kAdjectives = {
    "old",   "young", "small", "large",  "quiet", "bright", "dark",  "heavy", "light",
    "narrow", "wide", "green", "red",    "blue",  "cold",   "warm",  "tall",  "busy"};

const std::array<const char*, 8> kPrepositions = {"near", "under",  "over",   "behind",
                                                  "beside", "across", "through", "past"};

const std::array<const char*, 5> kDeterminers = {"the", "a", "one", "this", "every"};

const std::array<const char*, 6> kAdverbs = {"slowly", "quickly", "often",
                                             "quietly", "early",  "today"};

// Zipf-ish pick: squaring the uniform skews toward low indices, so a few
// words dominate like in natural text.
template <size_t N>
const char* pick(const std::array<const char*, N>& words, DetRng& rng) {
  const double u = rng.real01();
  const size_t idx = static_cast<size_t>(u * u * static_cast<double>(N));
  return words[std::min(idx, N - 1)];
}

void noun_phrase(std::string& out, DetRng& rng) {
  out += pick(kDeterminers, rng);
  out += ' ';
  if (rng.real01() < 0.45) {
    out += pick(kAdjectives, rng);
    out += ' ';
  }
  out += pick(kNouns, rng);
}

void prep_phrase(std::string& out, DetRng& rng) {
  out += pick(kPrepositions, rng);
  out += ' ';
  noun_phrase(out, rng);
}

std::string sentence(DetRng& rng) {
  std::string s;
  noun_phrase(s, rng);
  s += ' ';
  if (rng.real01() < 0.2) {
    s += pick(kAdverbs, rng);
    s += ' ';
  }
  s += pick(kVerbs, rng);
  s += ' ';
  noun_phrase(s, rng);
  if (rng.real01() < 0.5) {
    s += ' ';
    prep_phrase(s, rng);
  }
  if (rng.real01() < 0.25) {
    s += " and ";
    s += pick(kVerbs, rng);
    s += ' ';
    noun_phrase(s, rng);
  }
  s += rng.real01() < 0.9 ? " ." : " !";
  return s;
}

}  // namespace

std::vector<std::string> synth_sentences(size_t count, uint64_t seed) {
  DetRng rng(derive_seed(seed, stream::kSynthCorpus));
  std::vector<std::string> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) out.push_back(sentence(rng));
  return out;
}

std::string synth_corpus(size_t n_docs, size_t sentences_per_doc, uint64_t seed) {
  const auto sentences = synth_sentences(n_docs * sentences_per_doc, seed);
  std::string out;
  size_t i = 0;
  for (size_t d = 0; d < n_docs; ++d) {
    for (size_t s = 0; s < sentences_per_doc; ++s) {
      out += sentences[i++];
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

}  // namespace bertlab
