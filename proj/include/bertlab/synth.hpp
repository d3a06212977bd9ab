#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bertlab {

// Deterministic toy-English corpus generator. Sentences follow a small
// phrase grammar (determiner-adjective-noun, subject-verb-object,
// prepositional phrases), so local word order carries real signal for
// masked-token training and order-sensitive probes.
std::vector<std::string> synth_sentences(size_t count, uint64_t seed);

// Blank-line-delimited documents, one sentence per line.
std::string synth_corpus(size_t n_docs, size_t sentences_per_doc, uint64_t seed);

}  // namespace bertlab
