#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <vector>

#include "bertlab/vocab.hpp"

namespace bertlab {

// A model-ready sequence: [CLS] ids... [SEP] [PAD]... of length exactly
// max_len. No MASK ids here; corruption happens in the objectives module.
struct PackedSequence {
  std::vector<int32_t> ids;
  uint64_t doc_index = 0;
  uint64_t seq_index = 0;  // chunk ordinal within the document

  size_t max_len() const { return ids.size(); }
};

// Blank-line-delimited documents; lines within a document are joined with a
// single space.
std::vector<std::string> read_documents(std::istream& in);
std::vector<std::string> read_documents_file(const std::string& path);

// Encodes each document and splits it into chunks of at most max_len - 2
// ids, wrapping each chunk as CLS ... SEP and padding to max_len. Document
// order is preserved; empty documents yield no sequences.
std::vector<PackedSequence> pack_corpus(const Vocab& vocab,
                                        const std::vector<std::string>& documents,
                                        size_t max_len);
std::vector<PackedSequence> pack_corpus(const Vocab& vocab, std::istream& corpus, size_t max_len);

}  // namespace bertlab
