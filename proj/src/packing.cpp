#include "bertlab/packing.hpp"

#include <fstream>
#include <stdexcept>

namespace bertlab {

std::vector<std::string> read_documents(std::istream& in) {
  std::vector<std::string> docs;
  std::string line;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      docs.push_back(current);
      current.clear();
    }
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool blank = true;
    for (char c : line) {
      if (c != ' ' && c != '\t') {
        blank = false;
        break;
      }
    }
    if (blank) {
      flush();
    } else {
      if (!current.empty()) current += ' ';
      current += line;
    }
  }
  flush();
  return docs;
}

std::vector<std::string> read_documents_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus file: " + path);
  return read_documents(in);
}

std::vector<PackedSequence> pack_corpus(const Vocab& vocab,
                                        const std::vector<std::string>& documents,
                                        size_t max_len) {
  if (max_len < 8) throw std::invalid_argument("pack_corpus: max_len must be >= 8");
  const size_t capacity = max_len - 2;
  std::vector<PackedSequence> out;
  for (size_t d = 0; d < documents.size(); ++d) {
    const auto ids = encode(vocab, documents[d]);
    uint64_t seq_index = 0;
    for (size_t start = 0; start < ids.size(); start += capacity) {
      const size_t n = std::min(capacity, ids.size() - start);
      PackedSequence seq;
      seq.doc_index = d;
      seq.seq_index = seq_index++;
      seq.ids.reserve(max_len);
      seq.ids.push_back(Vocab::kCls);
      seq.ids.insert(seq.ids.end(), ids.begin() + start, ids.begin() + start + n);
      seq.ids.push_back(Vocab::kSep);
      seq.ids.resize(max_len, Vocab::kPad);
      out.push_back(std::move(seq));
    }
  }
  return out;
}

std::vector<PackedSequence> pack_corpus(const Vocab& vocab, std::istream& corpus,
                                        size_t max_len) {
  return pack_corpus(vocab, read_documents(corpus), max_len);
}

}  // namespace bertlab
