#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bertlab/model.hpp"
#include "bertlab/tensor.hpp"
#include "bertlab/vocab.hpp"

namespace bertlab {

struct ProbeExample {
  std::string split;  // "tr", "va", "te"
  std::string label;
  std::string sentence;
};

struct ProbeTaskDataset {
  std::string name;
  std::vector<ProbeExample> examples;
  std::vector<std::string> label_vocab;

  std::vector<const ProbeExample*> split(const std::string& which) const;
  std::vector<int32_t> split_labels(const std::string& which) const;
  std::vector<std::string> split_sentences(const std::string& which) const;
};

// Strict TSV: split \t label \t sentence; split in {tr, va, te}
// (case-insensitive); every split must be present; errors carry line numbers.
ProbeTaskDataset load_probe_task_tsv(const std::string& path);
std::string probe_task_to_tsv(const ProbeTaskDataset& task);

struct LengthBin {
  int lo = 0;
  int hi = 0;
};
std::vector<LengthBin> default_sentlen_bins();  // 3-6, 7-10, ..., 23-26

// Word-count prediction: uniformly sample a bin, then a length, then fill
// with random alphabetic vocabulary words; the label is the bin index.
ProbeTaskDataset gen_synthetic_sentlen(const Vocab& vocab, size_t n_per_split,
                                       const std::vector<LengthBin>& bins, uint64_t seed);

// Adjacent-word inversion detection over the given source sentences (words
// are whitespace-delimited; sources with fewer than 4 words are skipped).
// Sources are partitioned across splits before sampling, so splits stay
// disjoint. Labels: "I" inverted, "O" intact.
ProbeTaskDataset gen_synthetic_bshift(const std::vector<std::string>& sentences,
                                      size_t n_per_split, uint64_t seed);

struct RepMatrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<float> data;  // row-major

  std::vector<float> row(size_t r) const {
    return {data.begin() + static_cast<long>(r * cols),
            data.begin() + static_cast<long>((r + 1) * cols)};
  }
};

struct ClsReps {
  std::vector<RepMatrix> by_layer;  // n_layers entries
  size_t truncated = 0;             // sentences longer than max_len - 2 tokens
};

// Per-layer CLS vectors for each sentence, dropout disabled.
ClsReps extract_cls_reps(Model<float>& model, const std::vector<std::string>& sentences,
                         const Vocab& vocab, size_t batch_size = 64);

struct ProbeConfig {
  int hidden = 50;
  double lr = 1e-3;
  int batch_size = 64;
  int max_epochs = 50;
  int patience = 5;
  int n_seeds = 3;
  int jobs = 1;
};

// The MLP probe: input -> hidden (rectifier) -> classes.
struct TrainedProbe {
  size_t input_dim = 0;
  size_t hidden = 0;
  size_t classes = 0;
  std::vector<float> w1, b1, w2, b2;
  double val_accuracy = 0.0;

  std::vector<int32_t> predict(const RepMatrix& x) const;
  double accuracy_on(const RepMatrix& x, const std::vector<int32_t>& y) const;
};

TrainedProbe train_probe(const RepMatrix& train_x, const std::vector<int32_t>& train_y,
                         const RepMatrix& val_x, const std::vector<int32_t>& val_y,
                         const ProbeConfig& config, uint64_t seed);

// Argmax with lowest-index tie-break.
size_t best_layer_index(const std::vector<double>& val_accuracies);

struct ProbeSeedResult {
  uint64_t seed = 0;
  double val_acc = 0.0;
  double test_acc = 0.0;
};

struct ProbeLayerResult {
  int layer = 0;  // 1-based, matching per-layer tables
  std::vector<ProbeSeedResult> seeds;
};

struct ProbeReport {
  std::string checkpoint_id;
  std::string objective;
  std::string task;
  std::vector<ProbeLayerResult> layers;
  std::vector<int> best_layer_per_seed;
  std::vector<double> test_at_best_per_seed;
  double headline_mean = 0.0;
  double headline_std = 0.0;  // sample std over seeds
};

// Trains one probe per (layer, seed); per seed the best layer is the argmax
// of validation accuracy (ties to the lower layer) and the headline
// aggregates test accuracy at each seed's best layer.
ProbeReport probe_all_layers(Model<float>& model, const ProbeTaskDataset& task,
                             const Vocab& vocab, const ProbeConfig& config, uint64_t master_seed,
                             const std::string& checkpoint_id_str = "",
                             const std::string& objective = "");

std::string probe_report_to_json(const ProbeReport& report);
ProbeReport probe_report_from_json(const std::string& text);

// Objective-by-task grid of headline accuracies.
struct GridCell {
  double mean = 0.0;
  double std_dev = 0.0;
  bool best_in_column = false;
};

struct ComparisonGrid {
  std::vector<std::string> objectives;  // row labels, input order
  std::vector<std::string> tasks;       // column labels, sorted
  std::vector<std::vector<GridCell>> cells;
};

ComparisonGrid aggregate_reports(const std::vector<ProbeReport>& reports);
std::string render_grid_markdown(const ComparisonGrid& grid);
std::string render_grid_csv(const ComparisonGrid& grid);
std::string render_grid_json(const ComparisonGrid& grid);

}  // namespace bertlab
