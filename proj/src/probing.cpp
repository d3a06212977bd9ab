#include "bertlab/probing.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "bertlab/metrics.hpp"
#include "bertlab/rng.hpp"
#include "bertlab/training.hpp"
#include "json.hpp"

namespace bertlab {

std::vector<const ProbeExample*> ProbeTaskDataset::split(const std::string& which) const {
  std::vector<const ProbeExample*> out;
  for (const auto& ex : examples) {
    if (ex.split == which) out.push_back(&ex);
  }
  return out;
}

std::vector<int32_t> ProbeTaskDataset::split_labels(const std::string& which) const {
  std::map<std::string, int32_t> index;
  for (size_t i = 0; i < label_vocab.size(); ++i) {
    index[label_vocab[i]] = static_cast<int32_t>(i);
  }
  std::vector<int32_t> out;
  for (const auto* ex : split(which)) out.push_back(index.at(ex->label));
  return out;
}

std::vector<std::string> ProbeTaskDataset::split_sentences(const std::string& which) const {
  std::vector<std::string> out;
  for (const auto* ex : split(which)) out.push_back(ex->sentence);
  return out;
}

ProbeTaskDataset load_probe_task_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read task file: " + path);
  ProbeTaskDataset ds;
  ds.name = path;
  std::set<std::string> labels;
  std::set<std::string> seen;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t t1 = line.find('\t');
    const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 3 tab-separated fields");
    }
    std::string split = line.substr(0, t1);
    std::transform(split.begin(), split.end(), split.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (split != "tr" && split != "va" && split != "te") {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown split tag \"" +
                               line.substr(0, t1) + "\"");
    }
    ProbeExample ex;
    ex.split = split;
    ex.label = line.substr(t1 + 1, t2 - t1 - 1);
    ex.sentence = line.substr(t2 + 1);
    if (ex.sentence.find('\t') != std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 3 tab-separated fields");
    }
    labels.insert(ex.label);
    seen.insert(split);
    ds.examples.push_back(std::move(ex));
  }
  for (const char* s : {"tr", "va", "te"}) {
    if (!seen.count(s)) throw std::runtime_error(path + ": missing split \"" + s + "\"");
  }
  ds.label_vocab.assign(labels.begin(), labels.end());
  return ds;
}

std::string probe_task_to_tsv(const ProbeTaskDataset& task) {
  std::ostringstream out;
  for (const auto& ex : task.examples) {
    out << ex.split << '\t' << ex.label << '\t' << ex.sentence << '\n';
  }
  return out.str();
}

std::vector<LengthBin> default_sentlen_bins() {
  return {{3, 6}, {7, 10}, {11, 14}, {15, 18}, {19, 22}, {23, 26}};
}

namespace {

std::vector<std::string> alphabetic_surfaces(const Vocab& vocab) {
  std::vector<std::string> words;
  for (int32_t id = Vocab::kNumSpecials; id < vocab.size(); ++id) {
    if (vocab.is_continuation(id)) continue;
    const std::string s = token_surface(vocab, id);
    bool alpha = !s.empty();
    for (const char c : s) alpha &= (c >= 'a' && c <= 'z');
    if (alpha) words.push_back(s);
  }
  if (words.empty()) throw std::runtime_error("vocab has no alphabetic word tokens");
  return words;
}

const char* kSplits[3] = {"tr", "va", "te"};

std::vector<std::string> whitespace_words(const std::string& sentence) {
  std::vector<std::string> words;
  std::istringstream in(sentence);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

}  // namespace

ProbeTaskDataset gen_synthetic_sentlen(const Vocab& vocab, size_t n_per_split,
                                       const std::vector<LengthBin>& bins, uint64_t seed) {
  if (bins.empty()) throw std::invalid_argument("sentlen bins must be non-empty");
  for (const auto& b : bins) {
    if (b.lo <= 0 || b.hi < b.lo) throw std::invalid_argument("malformed sentlen bin");
  }
  const auto words = alphabetic_surfaces(vocab);
  ProbeTaskDataset ds;
  ds.name = "synthetic:sentlen";
  for (size_t split = 0; split < 3; ++split) {
    DetRng rng(derive_seed(seed, stream::kSentLen, split));
    for (size_t i = 0; i < n_per_split; ++i) {
      const size_t bin = static_cast<size_t>(rng.below(bins.size()));
      const int len =
          bins[bin].lo + static_cast<int>(rng.below(
                             static_cast<uint64_t>(bins[bin].hi - bins[bin].lo + 1)));
      std::vector<std::string> sentence_words;
      sentence_words.reserve(static_cast<size_t>(len));
      for (int w = 0; w < len; ++w) {
        sentence_words.push_back(words[static_cast<size_t>(rng.below(words.size()))]);
      }
      ds.examples.push_back(
          ProbeExample{kSplits[split], std::to_string(bin), join_words(sentence_words)});
    }
  }
  for (size_t b = 0; b < bins.size(); ++b) ds.label_vocab.push_back(std::to_string(b));
  return ds;
}

ProbeTaskDataset gen_synthetic_bshift(const std::vector<std::string>& sentences,
                                      size_t n_per_split, uint64_t seed) {
  // Usable sources: at least 4 words and at least one unequal adjacent pair.
  std::vector<std::vector<std::string>> sources;
  for (const auto& s : sentences) {
    auto words = whitespace_words(s);
    if (words.size() < 4) continue;
    bool swappable = false;
    for (size_t i = 0; i + 1 < words.size(); ++i) {
      if (words[i] != words[i + 1]) swappable = true;
    }
    if (swappable) sources.push_back(std::move(words));
  }
  if (sources.empty()) {
    throw std::runtime_error("bshift: no usable source sentences (need >= 4 words)");
  }

  DetRng part_rng(derive_seed(seed, stream::kBShift));
  part_rng.shuffle(sources);
  // Disjoint source pools per split, proportional to a 2:1:1 spread.
  const size_t n = sources.size();
  std::vector<std::pair<size_t, size_t>> pools;
  if (n >= 3) {
    const size_t a = std::max<size_t>(1, n / 2);
    const size_t b = std::max<size_t>(1, (n - a) / 2);
    pools = {{0, a}, {a, a + b}, {a + b, n}};
  } else {
    throw std::runtime_error("bshift: need at least 3 source sentences for disjoint splits");
  }

  ProbeTaskDataset ds;
  ds.name = "synthetic:bshift";
  ds.label_vocab = {"I", "O"};
  for (size_t split = 0; split < 3; ++split) {
    DetRng rng(derive_seed(seed, stream::kBShift, split + 1));
    const auto [lo, hi] = pools[split];
    for (size_t i = 0; i < n_per_split; ++i) {
      const auto& words = sources[lo + static_cast<size_t>(rng.below(hi - lo))];
      const bool invert = rng.real01() < 0.5;
      if (!invert) {
        ds.examples.push_back(ProbeExample{kSplits[split], "O", join_words(words)});
        continue;
      }
      auto mutated = words;
      for (;;) {  // redraw until the chosen adjacent pair differs
        const size_t j = static_cast<size_t>(rng.below(words.size() - 1));
        if (words[j] == words[j + 1]) continue;
        std::swap(mutated[j], mutated[j + 1]);
        break;
      }
      ds.examples.push_back(ProbeExample{kSplits[split], "I", join_words(mutated)});
    }
  }
  return ds;
}

ClsReps extract_cls_reps(Model<float>& model, const std::vector<std::string>& sentences,
                         const Vocab& vocab, size_t batch_size) {
  if (sentences.empty()) throw std::runtime_error("extract_cls_reps: empty sentence list");
  const size_t max_len = static_cast<size_t>(model.config().max_len);
  const size_t capacity = max_len - 2;
  const size_t d = static_cast<size_t>(model.config().d_hidden);
  const size_t layers = static_cast<size_t>(model.config().n_layers);

  ClsReps reps;
  reps.by_layer.assign(layers, RepMatrix{});
  for (auto& m : reps.by_layer) {
    m.rows = sentences.size();
    m.cols = d;
    m.data.resize(sentences.size() * d);
  }

  for (size_t start = 0; start < sentences.size(); start += batch_size) {
    const size_t count = std::min(batch_size, sentences.size() - start);
    std::vector<std::vector<int32_t>> seqs;
    seqs.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      auto ids = encode(vocab, sentences[start + i]);
      if (ids.size() > capacity) {
        ids.resize(capacity);
        ++reps.truncated;
      }
      std::vector<int32_t> packed;
      packed.reserve(max_len);
      packed.push_back(Vocab::kCls);
      packed.insert(packed.end(), ids.begin(), ids.end());
      packed.push_back(Vocab::kSep);
      packed.resize(max_len, Vocab::kPad);
      seqs.push_back(std::move(packed));
    }
    const auto out = model.forward_eval(Batch::from_ids(seqs));
    for (size_t layer = 0; layer < layers; ++layer) {
      std::copy(out.cls_by_layer[layer].begin(), out.cls_by_layer[layer].end(),
                reps.by_layer[layer].data.begin() + static_cast<long>(start * d));
    }
  }
  return reps;
}

std::vector<int32_t> TrainedProbe::predict(const RepMatrix& x) const {
  if (x.cols != input_dim) throw std::runtime_error("probe input width mismatch");
  std::vector<int32_t> preds(x.rows);
  std::vector<float> h(hidden);
  for (size_t r = 0; r < x.rows; ++r) {
    const float* xr = x.data.data() + r * x.cols;
    for (size_t j = 0; j < hidden; ++j) {
      float acc = b1[j];
      for (size_t i = 0; i < input_dim; ++i) acc += xr[i] * w1[i * hidden + j];
      h[j] = acc > 0.0f ? acc : 0.0f;
    }
    size_t best = 0;
    float best_score = -std::numeric_limits<float>::infinity();
    for (size_t c = 0; c < classes; ++c) {
      float acc = b2[c];
      for (size_t j = 0; j < hidden; ++j) acc += h[j] * w2[j * classes + c];
      if (acc > best_score) {
        best_score = acc;
        best = c;
      }
    }
    preds[r] = static_cast<int32_t>(best);
  }
  return preds;
}

double TrainedProbe::accuracy_on(const RepMatrix& x, const std::vector<int32_t>& y) const {
  return accuracy(predict(x), y);
}

TrainedProbe train_probe(const RepMatrix& train_x, const std::vector<int32_t>& train_y,
                         const RepMatrix& val_x, const std::vector<int32_t>& val_y,
                         const ProbeConfig& config, uint64_t seed) {
  if (train_x.rows != train_y.size() || val_x.rows != val_y.size()) {
    throw std::runtime_error("probe data/label size mismatch");
  }
  if (train_x.cols != val_x.cols) throw std::runtime_error("probe rep width mismatch");
  std::set<int32_t> class_set(train_y.begin(), train_y.end());
  if (class_set.size() < 2) {
    throw std::runtime_error("probe training labels contain a single class");
  }
  const size_t classes =
      static_cast<size_t>(*std::max_element(train_y.begin(), train_y.end())) + 1;
  const size_t d = train_x.cols;
  const size_t hidden = static_cast<size_t>(config.hidden);

  DetRng rng(derive_seed(seed, stream::kProbe));
  Tensor<float> w1({d, hidden});
  Tensor<float> b1({hidden});
  Tensor<float> w2({hidden, classes});
  Tensor<float> b2({classes});
  for (auto& v : w1.data) v = static_cast<float>(rng.truncated_normal(0.02));
  for (auto& v : w2.data) v = static_cast<float>(rng.truncated_normal(0.02));
  w1.requires_grad = b1.requires_grad = w2.requires_grad = b2.requires_grad = true;
  std::vector<Tensor<float>*> params = {&w1, &b1, &w2, &b2};

  // Adam state mirrors the parameter list.
  std::vector<std::vector<double>> m, v;
  for (auto* p : params) {
    m.emplace_back(p->data.size(), 0.0);
    v.emplace_back(p->data.size(), 0.0);
  }
  int64_t t = 0;
  const double b1c = 0.9, b2c = 0.999, eps = 1e-8;

  auto eval_val = [&] {
    TrainedProbe probe;
    probe.input_dim = d;
    probe.hidden = hidden;
    probe.classes = classes;
    probe.w1 = w1.data;
    probe.b1 = b1.data;
    probe.w2 = w2.data;
    probe.b2 = b2.data;
    return probe.accuracy_on(val_x, val_y);
  };

  std::vector<size_t> order(train_x.rows);
  std::iota(order.begin(), order.end(), 0);

  TrainedProbe best;
  best.input_dim = d;
  best.hidden = hidden;
  best.classes = classes;
  best.w1 = w1.data;
  best.b1 = b1.data;
  best.w2 = w2.data;
  best.b2 = b2.data;
  best.val_accuracy = -1.0;
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    DetRng shuffle_rng(derive_seed(seed, stream::kProbe, static_cast<uint64_t>(epoch) + 1));
    shuffle_rng.shuffle(order);
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.batch_size)) {
      const size_t count =
          std::min(order.size() - start, static_cast<size_t>(config.batch_size));
      Tensor<float> xb({count, d});
      std::vector<int32_t> yb(count);
      for (size_t i = 0; i < count; ++i) {
        const size_t r = order[start + i];
        std::copy_n(train_x.data.data() + r * d, d, xb.data.data() + i * d);
        yb[i] = train_y[r];
      }
      Tape<float> tape;
      const auto x = tape.constant(std::move(xb));
      const auto h = tape.relu(tape.add_rowvec(tape.matmul(x, tape.leaf(&w1)), tape.leaf(&b1)));
      const auto logits = tape.add_rowvec(tape.matmul(h, tape.leaf(&w2)), tape.leaf(&b2));
      const auto loss = tape.cross_entropy(logits, yb);
      for (auto* p : params) p->zero_grad();
      tape.backward(loss);

      ++t;
      const double bc1 = 1.0 - std::pow(b1c, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(b2c, static_cast<double>(t));
      for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = *params[pi];
        for (size_t i = 0; i < p.data.size(); ++i) {
          const double g = p.grad[i];
          m[pi][i] = b1c * m[pi][i] + (1 - b1c) * g;
          v[pi][i] = b2c * v[pi][i] + (1 - b2c) * g * g;
          p.data[i] -= static_cast<float>(config.lr * (m[pi][i] / bc1) /
                                          (std::sqrt(v[pi][i] / bc2) + eps));
        }
      }
    }
    const double acc = eval_val();
    if (acc > best.val_accuracy) {
      best.val_accuracy = acc;
      best.w1 = w1.data;
      best.b1 = b1.data;
      best.w2 = w2.data;
      best.b2 = b2.data;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (epochs_since_best > config.patience) break;
    }
  }
  return best;
}

size_t best_layer_index(const std::vector<double>& val_accuracies) {
  if (val_accuracies.empty()) throw std::invalid_argument("best_layer_index: empty input");
  size_t best = 0;
  for (size_t i = 1; i < val_accuracies.size(); ++i) {
    if (val_accuracies[i] > val_accuracies[best]) best = i;  // strict: ties keep lower layer
  }
  return best;
}

ProbeReport probe_all_layers(Model<float>& model, const ProbeTaskDataset& task,
                             const Vocab& vocab, const ProbeConfig& config, uint64_t master_seed,
                             const std::string& checkpoint_id_str,
                             const std::string& objective) {
  const auto tr_sents = task.split_sentences("tr");
  const auto va_sents = task.split_sentences("va");
  const auto te_sents = task.split_sentences("te");
  const auto tr_y = task.split_labels("tr");
  const auto va_y = task.split_labels("va");
  const auto te_y = task.split_labels("te");
  if (tr_sents.empty() || va_sents.empty() || te_sents.empty()) {
    throw std::runtime_error("probe task has an empty split");
  }

  const auto tr_reps = extract_cls_reps(model, tr_sents, vocab);
  const auto va_reps = extract_cls_reps(model, va_sents, vocab);
  const auto te_reps = extract_cls_reps(model, te_sents, vocab);

  const size_t layers = tr_reps.by_layer.size();
  const size_t n_seeds = static_cast<size_t>(config.n_seeds);

  ProbeReport report;
  report.checkpoint_id = checkpoint_id_str;
  report.objective = objective;
  report.task = task.name;
  report.layers.resize(layers);

  struct Job {
    size_t layer;
    size_t seed_index;
  };
  std::vector<Job> jobs;
  for (size_t layer = 0; layer < layers; ++layer) {
    report.layers[layer].layer = static_cast<int>(layer) + 1;
    report.layers[layer].seeds.resize(n_seeds);
    for (size_t s = 0; s < n_seeds; ++s) jobs.push_back(Job{layer, s});
  }

  auto run_job = [&](const Job& job) {
    const uint64_t seed = derive_seed(master_seed, stream::kProbe, job.layer, job.seed_index);
    const auto probe = train_probe(tr_reps.by_layer[job.layer], tr_y, va_reps.by_layer[job.layer],
                                   va_y, config, seed);
    ProbeSeedResult r;
    r.seed = job.seed_index;
    r.val_acc = probe.val_accuracy;
    r.test_acc = probe.accuracy_on(te_reps.by_layer[job.layer], te_y);
    report.layers[job.layer].seeds[job.seed_index] = r;
  };

  const int n_threads = std::max(1, config.jobs);
  if (n_threads == 1) {
    for (const auto& job : jobs) run_job(job);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int w = 0; w < n_threads; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const size_t i = next.fetch_add(1);
          if (i >= jobs.size()) return;
          run_job(jobs[i]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<double> test_at_best;
  for (size_t s = 0; s < n_seeds; ++s) {
    std::vector<double> val_by_layer(layers);
    for (size_t layer = 0; layer < layers; ++layer) {
      val_by_layer[layer] = report.layers[layer].seeds[s].val_acc;
    }
    const size_t best = best_layer_index(val_by_layer);
    report.best_layer_per_seed.push_back(static_cast<int>(best) + 1);
    test_at_best.push_back(report.layers[best].seeds[s].test_acc);
  }
  report.test_at_best_per_seed = test_at_best;
  report.headline_mean = mean(test_at_best);
  report.headline_std = sample_std(test_at_best);
  return report;
}

std::string probe_report_to_json(const ProbeReport& report) {
  nlohmann::json j;
  j["checkpoint_id"] = report.checkpoint_id;
  j["objective"] = report.objective;
  j["task"] = report.task;
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& layer : report.layers) {
    nlohmann::json lj;
    lj["layer"] = layer.layer;
    auto& seeds = lj["seeds"] = nlohmann::json::array();
    for (const auto& s : layer.seeds) {
      seeds.push_back({{"seed", s.seed}, {"val_acc", s.val_acc}, {"test_acc", s.test_acc}});
    }
    layers.push_back(lj);
  }
  j["best_layer_per_seed"] = report.best_layer_per_seed;
  j["test_at_best_per_seed"] = report.test_at_best_per_seed;
  j["headline_mean"] = report.headline_mean;
  j["headline_std"] = report.headline_std;
  return j.dump(2);
}

ProbeReport probe_report_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  ProbeReport report;
  report.checkpoint_id = j.at("checkpoint_id").get<std::string>();
  report.objective = j.value("objective", "");
  report.task = j.at("task").get<std::string>();
  for (const auto& lj : j.at("layers")) {
    ProbeLayerResult layer;
    layer.layer = lj.at("layer").get<int>();
    for (const auto& sj : lj.at("seeds")) {
      layer.seeds.push_back(ProbeSeedResult{sj.at("seed").get<uint64_t>(),
                                            sj.at("val_acc").get<double>(),
                                            sj.at("test_acc").get<double>()});
    }
    report.layers.push_back(std::move(layer));
  }
  report.best_layer_per_seed = j.at("best_layer_per_seed").get<std::vector<int>>();
  report.test_at_best_per_seed = j.at("test_at_best_per_seed").get<std::vector<double>>();
  report.headline_mean = j.at("headline_mean").get<double>();
  report.headline_std = j.at("headline_std").get<double>();
  return report;
}

ComparisonGrid aggregate_reports(const std::vector<ProbeReport>& reports) {
  if (reports.empty()) throw std::runtime_error("aggregate_reports: no reports");

  // Group by objective, preserve first-appearance order; task sets must match.
  std::vector<std::string> objectives;
  std::map<std::string, std::map<std::string, const ProbeReport*>> by_obj;
  for (const auto& r : reports) {
    const std::string obj = r.objective.empty() ? "(unknown)" : r.objective;
    if (!by_obj.count(obj)) objectives.push_back(obj);
    if (by_obj[obj].count(r.task)) {
      throw std::runtime_error("duplicate report for objective " + obj + ", task " + r.task);
    }
    by_obj[obj][r.task] = &r;
  }

  std::set<std::string> task_set;
  for (const auto& [obj, tasks] : by_obj) {
    for (const auto& [t, _] : tasks) task_set.insert(t);
  }
  for (const auto& [obj, tasks] : by_obj) {
    if (tasks.size() != task_set.size()) {
      throw std::runtime_error("mismatched task sets across objectives (objective " + obj +
                               " has " + std::to_string(tasks.size()) + " of " +
                               std::to_string(task_set.size()) + " tasks)");
    }
  }

  ComparisonGrid grid;
  grid.objectives = objectives;
  grid.tasks.assign(task_set.begin(), task_set.end());
  grid.cells.resize(objectives.size(), std::vector<GridCell>(grid.tasks.size()));
  for (size_t r = 0; r < objectives.size(); ++r) {
    for (size_t c = 0; c < grid.tasks.size(); ++c) {
      const auto* rep = by_obj[objectives[r]].at(grid.tasks[c]);
      grid.cells[r][c].mean = rep->headline_mean;
      grid.cells[r][c].std_dev = rep->headline_std;
    }
  }
  for (size_t c = 0; c < grid.tasks.size(); ++c) {
    size_t best = 0;
    for (size_t r = 1; r < objectives.size(); ++r) {
      if (grid.cells[r][c].mean > grid.cells[best][c].mean) best = r;
    }
    grid.cells[best][c].best_in_column = true;
  }
  return grid;
}

namespace {

std::string format_cell(const GridCell& cell) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f ± %.1f", cell.mean * 100.0, cell.std_dev * 100.0);
  return buf;
}

}  // namespace

std::string render_grid_markdown(const ComparisonGrid& grid) {
  std::ostringstream out;
  out << "| Objective |";
  for (const auto& t : grid.tasks) out << " " << t << " |";
  out << "\n|---|";
  for (size_t c = 0; c < grid.tasks.size(); ++c) out << "---|";
  out << "\n";
  for (size_t r = 0; r < grid.objectives.size(); ++r) {
    out << "| " << grid.objectives[r] << " |";
    for (size_t c = 0; c < grid.tasks.size(); ++c) {
      const auto& cell = grid.cells[r][c];
      if (cell.best_in_column) {
        out << " **" << format_cell(cell) << "** |";
      } else {
        out << " " << format_cell(cell) << " |";
      }
    }
    out << "\n";
  }
  return out.str();
}

std::string render_grid_csv(const ComparisonGrid& grid) {
  std::ostringstream out;
  out << "objective";
  for (const auto& t : grid.tasks) out << "," << t << "_mean," << t << "_std";
  out << "\n";
  for (size_t r = 0; r < grid.objectives.size(); ++r) {
    out << grid.objectives[r];
    for (size_t c = 0; c < grid.tasks.size(); ++c) {
      out << "," << grid.cells[r][c].mean << "," << grid.cells[r][c].std_dev;
    }
    out << "\n";
  }
  return out.str();
}

std::string render_grid_json(const ComparisonGrid& grid) {
  nlohmann::json j;
  j["tasks"] = grid.tasks;
  auto& rows = j["rows"] = nlohmann::json::array();
  for (size_t r = 0; r < grid.objectives.size(); ++r) {
    nlohmann::json row;
    row["objective"] = grid.objectives[r];
    auto& cells = row["cells"] = nlohmann::json::array();
    for (size_t c = 0; c < grid.tasks.size(); ++c) {
      cells.push_back({{"task", grid.tasks[c]},
                       {"mean", grid.cells[r][c].mean},
                       {"std", grid.cells[r][c].std_dev},
                       {"best_in_column", grid.cells[r][c].best_in_column}});
    }
    rows.push_back(row);
  }
  return j.dump(2);
}

}  // namespace bertlab
