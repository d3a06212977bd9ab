#include "bertlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace bertlab {

void TrainConfig::validate() const {
  if (steps < 0) throw std::runtime_error("steps must be >= 0");
  if (batch_size <= 0) throw std::runtime_error("batch_size must be positive");
  if (warmup_steps > steps) {
    throw std::runtime_error("warmup_steps (" + std::to_string(warmup_steps) +
                             ") must not exceed steps (" + std::to_string(steps) + ")");
  }
  if (peak_lr <= 0) throw std::runtime_error("peak_lr must be positive");
  if (adam_eps <= 0) throw std::runtime_error("adam eps must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw std::runtime_error("adam betas must be in [0, 1)");
  }
  if (weight_decay < 0) throw std::runtime_error("weight_decay must be >= 0");
}

double lr_at(int64_t step, const TrainConfig& config) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (config.steps == 0) return 0.0;
  const double peak = config.peak_lr;
  if (step < config.warmup_steps) {
    return peak * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  }
  if (step >= config.steps) return 0.0;
  const double denom = static_cast<double>(config.steps - config.warmup_steps);
  if (denom == 0) return peak;
  return peak * static_cast<double>(config.steps - step) / denom;
}

AdamState make_adam_state(const Model<float>& model) {
  AdamState state;
  state.m.reserve(model.params().size());
  state.v.reserve(model.params().size());
  for (const auto& p : model.params()) {
    state.m.emplace_back(p.tensor.numel(), 0.0f);
    state.v.emplace_back(p.tensor.numel(), 0.0f);
  }
  return state;
}

void adam_step(Model<float>& model, AdamState& state, double lr, const TrainConfig& config) {
  state.t += 1;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  // Sign-error guard: the bias-corrected Adam step is bounded by
  // lr/(1-beta1) up to small factors; allow a 10x margin.
  const double magnitude_bound = 10.0 * lr / (1.0 - b1);

  double clip_scale = 1.0;
  if (config.grad_clip > 0) {
    double norm_sq = 0;
    for (auto& p : model.params()) {
      if (p.tensor.grad.empty()) continue;
      for (const float g : p.tensor.grad) norm_sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(norm_sq);
    if (norm > config.grad_clip) clip_scale = config.grad_clip / norm;
  }

  size_t pi = 0;
  for (auto& p : model.params()) {
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    ++pi;
    if (p.tensor.grad.empty()) continue;  // parameter not touched this step
    for (size_t i = 0; i < p.tensor.data.size(); ++i) {
      const double g0 = static_cast<double>(p.tensor.grad[i]) * clip_scale;
      if (!std::isfinite(g0)) {
        throw std::runtime_error("non-finite gradient at " + p.name);
      }
      const double mi = b1 * m[i] + (1.0 - b1) * g0;
      const double vi = b2 * v[i] + (1.0 - b2) * g0 * g0;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      const double update = lr * mhat / (std::sqrt(vhat) + config.adam_eps);
      if (std::abs(update) > magnitude_bound) {
        throw std::logic_error("adam update exceeded sanity bound at " + p.name);
      }
      double value = static_cast<double>(p.tensor.data[i]) - update;
      if (p.decay && config.weight_decay > 0) {
        value -= lr * config.weight_decay * static_cast<double>(p.tensor.data[i]);
      }
      p.tensor.data[i] = static_cast<float>(value);
    }
  }
}

std::string loss_curve_csv(const std::vector<LossPoint>& curve) {
  std::ostringstream out;
  out << "step,lr,loss\n";
  for (const auto& p : curve) {
    out << p.step << "," << p.lr << "," << p.loss << "\n";
  }
  return out.str();
}

ExampleStream generated_stream(const std::vector<PackedSequence>& sequences,
                               ObjectiveKind objective, const Vocab& vocab, uint64_t master_seed,
                               bool resample_labels) {
  if (resample_labels && objective != ObjectiveKind::kRandom) {
    throw std::runtime_error("resampled labels are a Random-objective diagnostic");
  }
  ExampleStream stream;
  stream.count = sequences.size();
  stream.get = [&sequences, objective, &vocab, master_seed, resample_labels](size_t index,
                                                                             uint64_t epoch) {
    const auto& seq = sequences.at(index);
    if (resample_labels) return make_random(seq, vocab, master_seed, epoch);
    return make_example(objective, seq, vocab, master_seed);
  };
  return stream;
}

ExampleStream fixed_stream(std::vector<TrainingExample> examples) {
  auto shared = std::make_shared<std::vector<TrainingExample>>(std::move(examples));
  ExampleStream stream;
  stream.count = shared->size();
  stream.get = [shared](size_t index, uint64_t) { return shared->at(index); };
  return stream;
}

Batch batch_from_examples(const std::vector<TrainingExample>& examples) {
  if (examples.empty()) throw std::runtime_error("empty batch");
  Batch batch;
  batch.batch_size = examples.size();
  batch.len = examples[0].input_ids.size();
  batch.input_ids.reserve(batch.batch_size * batch.len);
  for (const auto& ex : examples) {
    if (ex.input_ids.size() != batch.len) throw std::runtime_error("ragged batch");
    batch.input_ids.insert(batch.input_ids.end(), ex.input_ids.begin(), ex.input_ids.end());
  }
  batch.type_ids.assign(batch.batch_size * batch.len, 0);
  batch.attend_mask.resize(batch.batch_size * batch.len);
  for (size_t i = 0; i < batch.input_ids.size(); ++i) {
    batch.attend_mask[i] = batch.input_ids[i] != Vocab::kPad;
  }
  return batch;
}

std::vector<int32_t> labels_from_examples(const std::vector<TrainingExample>& examples) {
  std::vector<int32_t> labels;
  for (const auto& ex : examples) {
    labels.insert(labels.end(), ex.labels.begin(), ex.labels.end());
  }
  return labels;
}

namespace {

std::vector<std::vector<float>> snapshot_params(const Model<float>& model) {
  std::vector<std::vector<float>> snap;
  snap.reserve(model.params().size());
  for (const auto& p : model.params()) snap.push_back(p.tensor.data);
  return snap;
}

void restore_params(Model<float>& model, const std::vector<std::vector<float>>& snap) {
  size_t i = 0;
  for (auto& p : model.params()) p.tensor.data = snap[i++];
}

}  // namespace

PretrainResult pretrain(Model<float>& model, const ExampleStream& examples,
                        const TrainConfig& config,
                        const std::function<void(const LossPoint&)>& on_log) {
  config.validate();
  if (examples.count == 0) throw std::runtime_error("pretrain: empty example stream");
  if (model.config().label_space !=
      label_space_size(config.objective, model.config().vocab_size)) {
    throw std::runtime_error("model head label space does not match objective " +
                             objective_name(config.objective));
  }

  PretrainResult result;
  AdamState opt = make_adam_state(model);
  auto snapshot = snapshot_params(model);

  // Deterministic shuffled stream: a fresh permutation per epoch.
  std::vector<size_t> order(examples.count);
  std::iota(order.begin(), order.end(), 0);
  uint64_t epoch = 0;
  size_t cursor = examples.count;  // forces a shuffle before first use

  for (int64_t step = 1; step <= config.steps; ++step) {
    std::vector<TrainingExample> batch_examples;
    batch_examples.reserve(static_cast<size_t>(config.batch_size));
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == examples.count) {
        DetRng rng(derive_seed(config.master_seed, stream::kEpochShuffle, epoch));
        rng.shuffle(order);
        cursor = 0;
        ++epoch;
      }
      batch_examples.push_back(examples.get(order[cursor++], epoch - 1));
    }

    const Batch batch = batch_from_examples(batch_examples);
    const auto labels = labels_from_examples(batch_examples);

    Tape<float> tape;
    DetRng dropout_rng(
        derive_seed(config.master_seed, stream::kDropout, static_cast<uint64_t>(step)));
    const auto graph = model.forward(tape, batch, /*training=*/true, dropout_rng);
    const auto loss_var = tape.cross_entropy(graph.head_logits, labels);
    const double loss = static_cast<double>(tape.val(loss_var).data[0]);
    const double lr = lr_at(step, config);

    if (!std::isfinite(loss)) {
      restore_params(model, snapshot);
      result.aborted = true;
      break;
    }

    model.zero_grads();
    tape.backward(loss_var);
    adam_step(model, opt, lr, config);

    result.curve.push_back(LossPoint{step, lr, loss});
    result.completed_steps = step;
    if (step % config.eval_every == 0 || step == config.steps) {
      snapshot = snapshot_params(model);
      if (on_log) on_log(result.curve.back());
    }
  }
  return result;
}

TaskDataset load_task_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read task file: " + path);
  TaskDataset ds;
  ds.name = path;
  std::set<std::string> labels;
  std::string line;
  size_t line_no = 0;
  std::set<std::string> seen_splits;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t start = 0;
    for (;;) {
      const size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        cols.push_back(line.substr(start));
        break;
      }
      cols.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (cols.size() != 3 && cols.size() != 4) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 3 or 4 tab-separated fields, got " +
                               std::to_string(cols.size()));
    }
    std::string split = cols[0];
    std::transform(split.begin(), split.end(), split.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (split != "tr" && split != "va" && split != "te") {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": unknown split tag \"" + cols[0] + "\"");
    }
    TaskExample ex;
    ex.split = split;
    ex.label = cols[1];
    ex.sentence1 = cols[2];
    if (cols.size() == 4) ex.sentence2 = cols[3];
    labels.insert(ex.label);
    seen_splits.insert(split);
    ds.examples.push_back(std::move(ex));
  }
  for (const char* s : {"tr", "va", "te"}) {
    if (!seen_splits.count(s)) {
      throw std::runtime_error(path + ": missing split \"" + s + "\"");
    }
  }
  ds.label_vocab.assign(labels.begin(), labels.end());
  return ds;
}

std::vector<const TaskExample*> TaskDataset::split(const std::string& which) const {
  std::vector<const TaskExample*> out;
  for (const auto& ex : examples) {
    if (ex.split == which) out.push_back(&ex);
  }
  return out;
}

std::string metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::kAccuracy:
      return "accuracy";
    case MetricKind::kF1:
      return "f1";
    case MetricKind::kMatthews:
      return "matthews";
    case MetricKind::kSpearman:
      return "spearman";
  }
  throw std::logic_error("unknown metric");
}

MetricKind metric_from_name(const std::string& name) {
  if (name == "accuracy") return MetricKind::kAccuracy;
  if (name == "f1") return MetricKind::kF1;
  if (name == "matthews") return MetricKind::kMatthews;
  if (name == "spearman") return MetricKind::kSpearman;
  throw std::runtime_error("unknown metric: " + name);
}

namespace {

// [CLS] s1 [SEP] s2 [SEP], truncating the longer side first.
std::pair<std::vector<int32_t>, std::vector<int32_t>> encode_pair(const Vocab& vocab,
                                                                  const TaskExample& ex,
                                                                  size_t max_len) {
  auto ids1 = encode(vocab, ex.sentence1);
  auto ids2 = encode(vocab, ex.sentence2);
  const size_t specials = ids2.empty() ? 2 : 3;
  while (ids1.size() + ids2.size() + specials > max_len) {
    if (ids1.size() >= ids2.size()) {
      ids1.pop_back();
    } else {
      ids2.pop_back();
    }
  }
  std::vector<int32_t> ids;
  std::vector<int32_t> types;
  ids.push_back(Vocab::kCls);
  types.push_back(0);
  for (const auto id : ids1) {
    ids.push_back(id);
    types.push_back(0);
  }
  ids.push_back(Vocab::kSep);
  types.push_back(0);
  if (!ids2.empty()) {
    for (const auto id : ids2) {
      ids.push_back(id);
      types.push_back(1);
    }
    ids.push_back(Vocab::kSep);
    types.push_back(1);
  }
  while (ids.size() < max_len) {
    ids.push_back(Vocab::kPad);
    types.push_back(0);
  }
  return {std::move(ids), std::move(types)};
}

struct EncodedTask {
  std::vector<int32_t> ids;    // n * max_len
  std::vector<int32_t> types;  // n * max_len
  std::vector<int32_t> class_labels;
  std::vector<float> reg_targets;
  size_t n = 0;
  size_t max_len = 0;
};

EncodedTask encode_split(const Vocab& vocab, const TaskDataset& task,
                         const std::vector<const TaskExample*>& split, size_t max_len) {
  EncodedTask enc;
  enc.n = split.size();
  enc.max_len = max_len;
  std::map<std::string, int32_t> label_index;
  for (size_t i = 0; i < task.label_vocab.size(); ++i) {
    label_index[task.label_vocab[i]] = static_cast<int32_t>(i);
  }
  for (const auto* ex : split) {
    auto [ids, types] = encode_pair(vocab, *ex, max_len);
    enc.ids.insert(enc.ids.end(), ids.begin(), ids.end());
    enc.types.insert(enc.types.end(), types.begin(), types.end());
    if (task.regression) {
      enc.reg_targets.push_back(std::stof(ex->label));
    } else {
      enc.class_labels.push_back(label_index.at(ex->label));
    }
  }
  return enc;
}

Batch batch_slice(const EncodedTask& enc, const std::vector<size_t>& rows) {
  Batch b;
  b.batch_size = rows.size();
  b.len = enc.max_len;
  b.input_ids.reserve(rows.size() * enc.max_len);
  b.type_ids.reserve(rows.size() * enc.max_len);
  for (const size_t r : rows) {
    b.input_ids.insert(b.input_ids.end(), enc.ids.begin() + static_cast<long>(r * enc.max_len),
                       enc.ids.begin() + static_cast<long>((r + 1) * enc.max_len));
    b.type_ids.insert(b.type_ids.end(), enc.types.begin() + static_cast<long>(r * enc.max_len),
                      enc.types.begin() + static_cast<long>((r + 1) * enc.max_len));
  }
  b.attend_mask.resize(b.input_ids.size());
  for (size_t i = 0; i < b.input_ids.size(); ++i) {
    b.attend_mask[i] = b.input_ids[i] != Vocab::kPad;
  }
  return b;
}

// Evaluates the headline metric (plus detail metrics) on a split.
std::map<std::string, double> eval_split(Model<float>& model, const EncodedTask& enc,
                                         bool regression, size_t eval_batch = 64) {
  std::vector<int32_t> preds;
  std::vector<double> scores;
  for (size_t start = 0; start < enc.n; start += eval_batch) {
    std::vector<size_t> rows;
    for (size_t r = start; r < std::min(enc.n, start + eval_batch); ++r) rows.push_back(r);
    const Batch batch = batch_slice(enc, rows);
    const auto out = model.forward_eval(batch);
    const size_t classes = out.logits_shape.back();
    for (size_t r = 0; r < rows.size(); ++r) {
      const float* row = out.head_logits.data() + r * classes;
      if (regression) {
        scores.push_back(static_cast<double>(row[0]));
      } else {
        size_t best = 0;
        for (size_t c = 1; c < classes; ++c) {
          if (row[c] > row[best]) best = c;
        }
        preds.push_back(static_cast<int32_t>(best));
      }
    }
  }
  std::map<std::string, double> metrics;
  if (regression) {
    std::vector<double> targets(enc.reg_targets.begin(), enc.reg_targets.end());
    metrics["spearman"] = spearman(scores, targets);
  } else {
    metrics["accuracy"] = accuracy(preds, enc.class_labels);
    bool binary = true;
    for (const auto l : enc.class_labels) binary &= (l == 0 || l == 1);
    if (binary) {
      metrics["f1"] = f1_binary(preds, enc.class_labels, 1);
      metrics["matthews"] = matthews(preds, enc.class_labels);
    }
  }
  return metrics;
}

}  // namespace

EvalMetrics finetune(const Model<float>& trunk, const Vocab& vocab, const TaskDataset& task,
                     const FinetuneConfig& config) {
  const auto tr = task.split("tr");
  const auto va = task.split("va");
  if (tr.empty() || va.empty()) throw std::runtime_error("finetune: empty split");
  if (!task.regression && task.label_vocab.size() < 2) {
    throw std::runtime_error("finetune: need at least two classes");
  }

  const size_t max_len = static_cast<size_t>(trunk.config().max_len);
  const EncodedTask enc_tr = encode_split(vocab, task, tr, max_len);
  const EncodedTask enc_va = encode_split(vocab, task, va, max_len);

  EvalMetrics result;
  result.task = task.name;
  result.headline = config.headline;
  result.seeds = config.seeds;

  for (const uint64_t seed : config.seeds) {
    // Fresh head on top of the pre-trained trunk.
    ModelConfig cfg = trunk.config();
    cfg.head = HeadKind::kSeqClass;
    cfg.label_space =
        task.regression ? 1 : static_cast<int>(task.label_vocab.size());
    cfg.dropout_p = config.train.dropout_p;
    Model<float> model(cfg);
    model.init_weights(derive_seed(seed, stream::kFinetune));
    for (auto& p : model.params()) {
      if (trunk.has_param(p.name)) p.tensor.data = trunk.param(p.name).data;
    }

    TrainConfig tc = config.train;
    tc.master_seed = seed;
    const size_t batches_per_epoch =
        (enc_tr.n + static_cast<size_t>(tc.batch_size) - 1) / static_cast<size_t>(tc.batch_size);
    tc.steps = static_cast<int64_t>(batches_per_epoch) * tc.max_epochs;
    tc.warmup_steps = std::min<int64_t>(tc.warmup_steps, tc.steps / 10);
    tc.validate();

    AdamState opt = make_adam_state(model);
    double best_metric = -std::numeric_limits<double>::infinity();
    std::map<std::string, double> best_detail;
    std::vector<std::vector<float>> best_params = snapshot_params(model);
    int epochs_since_best = 0;
    int64_t step = 0;

    std::vector<size_t> order(enc_tr.n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
      DetRng shuffle_rng(derive_seed(seed, stream::kFinetune, static_cast<uint64_t>(epoch) + 1));
      shuffle_rng.shuffle(order);
      for (size_t start = 0; start < enc_tr.n; start += static_cast<size_t>(tc.batch_size)) {
        std::vector<size_t> rows(order.begin() + static_cast<long>(start),
                                 order.begin() +
                                     static_cast<long>(std::min(
                                         enc_tr.n, start + static_cast<size_t>(tc.batch_size))));
        const Batch batch = batch_slice(enc_tr, rows);
        Tape<float> tape;
        ++step;
        DetRng dropout_rng(derive_seed(seed, stream::kDropout, static_cast<uint64_t>(step)));
        const auto graph = model.forward(tape, batch, /*training=*/true, dropout_rng);
        Tape<float>::Var loss_var;
        if (task.regression) {
          std::vector<float> targets;
          for (const size_t r : rows) targets.push_back(enc_tr.reg_targets[r]);
          loss_var = tape.mse_loss(graph.head_logits, targets);
        } else {
          std::vector<int32_t> labels;
          for (const size_t r : rows) labels.push_back(enc_tr.class_labels[r]);
          loss_var = tape.cross_entropy(graph.head_logits, labels);
        }
        if (!std::isfinite(tape.val(loss_var).data[0])) {
          throw std::runtime_error("finetune: non-finite loss");
        }
        model.zero_grads();
        tape.backward(loss_var);
        adam_step(model, opt, lr_at(step, tc), tc);
      }

      const auto detail = eval_split(model, enc_va, task.regression);
      const double value = detail.at(metric_name(config.headline));
      if (value > best_metric) {
        best_metric = value;
        best_detail = detail;
        best_params = snapshot_params(model);
        epochs_since_best = 0;
      } else {
        ++epochs_since_best;
        if (epochs_since_best > tc.patience) break;
      }
    }

    restore_params(model, best_params);
    result.per_seed.push_back(best_metric);
    result.detail_per_seed.push_back(best_detail);
  }

  result.mean_value = mean(result.per_seed);
  result.std_value = sample_std(result.per_seed);
  return result;
}

}  // namespace bertlab
