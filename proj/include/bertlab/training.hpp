#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bertlab/metrics.hpp"
#include "bertlab/model.hpp"
#include "bertlab/objectives.hpp"

namespace bertlab {

struct TrainConfig {
  ObjectiveKind objective = ObjectiveKind::kMlm;
  int64_t steps = 500;
  int batch_size = 32;
  double peak_lr = 1e-4;  // MLM pre-training default
  int64_t warmup_steps = 10000;
  double weight_decay = 0.01;
  double dropout_p = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t master_seed = 42;
  int64_t eval_every = 50;
  int max_epochs = 20;  // fine-tuning
  int patience = 3;     // fine-tuning early stop
  double grad_clip = 0.0;  // 0 disables clipping
  bool random_resample_labels = false;  // diagnostic: pure-noise Random labels

  void validate() const;
};

// Linear warmup from 0 to peak_lr over warmup_steps, then linear decay to 0
// at config.steps.
double lr_at(int64_t step, const TrainConfig& config);

struct AdamState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  int64_t t = 0;
};

AdamState make_adam_state(const Model<float>& model);

// Bias-corrected Adam with decoupled weight decay; parameters flagged
// decay=false (biases, layer norms) are not decayed. Throws on non-finite
// gradients, naming the parameter.
void adam_step(Model<float>& model, AdamState& state, double lr, const TrainConfig& config);

struct LossPoint {
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

std::string loss_curve_csv(const std::vector<LossPoint>& curve);

// Deterministic random-access example stream; epoch only matters for the
// resampled-label diagnostic mode.
struct ExampleStream {
  size_t count = 0;
  std::function<TrainingExample(size_t index, uint64_t epoch)> get;
};

ExampleStream generated_stream(const std::vector<PackedSequence>& sequences,
                               ObjectiveKind objective, const Vocab& vocab, uint64_t master_seed,
                               bool resample_labels = false);
ExampleStream fixed_stream(std::vector<TrainingExample> examples);

struct PretrainResult {
  std::vector<LossPoint> curve;  // one point per optimizer step
  bool aborted = false;  // non-finite loss hit; model rolled back to last snapshot
  int64_t completed_steps = 0;
};

// Runs exactly config.steps optimizer updates over a deterministic
// per-epoch-shuffled stream. The model is updated in place.
PretrainResult pretrain(Model<float>& model, const ExampleStream& examples,
                        const TrainConfig& config,
                        const std::function<void(const LossPoint&)>& on_log = nullptr);

// Builds a batch plus flattened labels from examples (token-level heads).
Batch batch_from_examples(const std::vector<TrainingExample>& examples);
std::vector<int32_t> labels_from_examples(const std::vector<TrainingExample>& examples);

// Fine-tuning task data: single sentences or sentence pairs.
struct TaskExample {
  std::string split;  // "tr", "va", "te"
  std::string label;
  std::string sentence1;
  std::string sentence2;  // empty for single-sentence tasks
};

struct TaskDataset {
  std::string name;
  std::vector<TaskExample> examples;
  std::vector<std::string> label_vocab;  // classification; empty when regression
  bool regression = false;

  std::vector<const TaskExample*> split(const std::string& which) const;
};

// TSV columns: split \t label \t sentence [\t sentence2]. Split tags tr/va/te
// (case-insensitive). Malformed lines error with their line number.
TaskDataset load_task_tsv(const std::string& path);

enum class MetricKind { kAccuracy, kF1, kMatthews, kSpearman };
std::string metric_name(MetricKind kind);
MetricKind metric_from_name(const std::string& name);

struct EvalMetrics {
  std::string task;
  MetricKind headline = MetricKind::kAccuracy;
  std::vector<uint64_t> seeds;
  std::vector<double> per_seed;  // headline value per seed (validation split)
  std::vector<std::map<std::string, double>> detail_per_seed;
  double mean_value = 0.0;
  double std_value = 0.0;  // sample std (n-1)
};

struct FinetuneConfig {
  TrainConfig train;  // peak_lr, batch_size, max_epochs, patience, adam, dropout
  MetricKind headline = MetricKind::kAccuracy;
  std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};
};

// Fine-tunes a sequence-classification (or regression) head plus the full
// encoder on the task, early-stopping on the validation headline metric, one
// run per seed; reports mean and sample std over seeds.
EvalMetrics finetune(const Model<float>& trunk, const Vocab& vocab, const TaskDataset& task,
                     const FinetuneConfig& config);

}  // namespace bertlab
