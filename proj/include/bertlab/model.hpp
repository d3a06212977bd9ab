#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "bertlab/objectives.hpp"
#include "bertlab/rng.hpp"
#include "bertlab/tensor.hpp"

namespace bertlab {

// Which output head sits on top of the encoder.
enum class HeadKind : uint8_t {
  kMlmVocab = 0,   // transform + (tied or untied) projection onto the vocabulary
  kTokenClass = 1, // per-position linear d_hidden -> K
  kSeqClass = 2,   // final-layer CLS -> tanh pooler -> C classes
};

std::string head_name(HeadKind kind);
HeadKind head_from_name(const std::string& name);

// Per-position heads for the pre-training objectives; MLM projects onto the
// vocabulary, everything else is a K-way token classifier.
HeadKind head_for(ObjectiveKind objective);

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_hidden = 64;
  int d_ff = 256;
  int max_len = 64;
  int vocab_size = 0;
  double dropout_p = 0.1;
  int label_space = 2;  // head output classes (vocab_size for MLM)
  std::string preset = "custom";
  bool tied_embeddings = true;
  HeadKind head = HeadKind::kMlmVocab;

  static ModelConfig from_preset(const std::string& name);
  void validate() const;
};

inline constexpr double kLayerNormEps = 1e-12;

template <typename T>
struct Param {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;  // weight decay applies (off for biases and layer norms)
};

// Flattened input batch. Rows are batch-major: token (b, l) lives at b*len+l.
struct Batch {
  size_t batch_size = 0;
  size_t len = 0;
  std::vector<int32_t> input_ids;    // batch_size * len
  std::vector<int32_t> type_ids;     // batch_size * len (0 unless sentence pairs)
  std::vector<uint8_t> attend_mask;  // 1 where attention may look (non-PAD)

  static Batch from_ids(const std::vector<std::vector<int32_t>>& sequences);
};

// Handles into a live tape for one forward pass.
template <typename T>
struct ForwardGraph {
  std::vector<typename Tape<T>::Var> cls_by_layer;  // n_layers entries, each (B, d)
  typename Tape<T>::Var head_logits{-1};            // (B*L, K) or (B, C)
  typename Tape<T>::Var final_hidden{-1};           // (B*L, d)
};

// Materialized forward outputs (evaluation mode).
struct ForwardOutput {
  std::vector<std::vector<float>> cls_by_layer;  // n_layers x (B * d)
  std::vector<float> head_logits;
  std::vector<size_t> logits_shape;
  std::vector<float> final_hidden;
};

template <typename T>
class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& config) : cfg_(config) { build(); }

  const ModelConfig& config() const { return cfg_; }

  Tensor<T>& param(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unknown parameter: " + name);
    return params_[it->second].tensor;
  }
  const Tensor<T>& param(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unknown parameter: " + name);
    return params_[it->second].tensor;
  }
  bool has_param(const std::string& name) const { return index_.count(name) != 0; }

  std::deque<Param<T>>& params() { return params_; }
  const std::deque<Param<T>>& params() const { return params_; }

  size_t parameter_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  // Weights ~ Normal(0, 0.02^2) truncated at +-2 sigma, biases 0, layer norm
  // gains 1; deterministic in registration order.
  void init_weights(uint64_t seed) {
    DetRng rng(derive_seed(seed, stream::kModelInit));
    for (auto& p : params_) {
      const bool is_gain = p.name.ends_with(".gain");
      const bool is_vector = p.tensor.shape.size() == 1;
      for (auto& v : p.tensor.data) {
        if (is_gain) {
          v = T(1);
        } else if (is_vector) {
          v = T(0);
        } else {
          v = static_cast<T>(rng.truncated_normal(0.02));
        }
      }
    }
  }

  // One transformer forward pass recorded on the given tape.
  ForwardGraph<T> forward(Tape<T>& tape, const Batch& batch, bool training, DetRng& rng) {
    using Var = typename Tape<T>::Var;
    const size_t bs = batch.batch_size;
    const size_t len = batch.len;
    const size_t d = static_cast<size_t>(cfg_.d_hidden);
    const size_t heads = static_cast<size_t>(cfg_.n_heads);
    const size_t dh = d / heads;
    if (len != static_cast<size_t>(cfg_.max_len)) {
      throw std::runtime_error("batch length " + std::to_string(len) +
                               " does not match model max_len " + std::to_string(cfg_.max_len));
    }
    if (batch.input_ids.size() != bs * len) {
      throw std::runtime_error("batch ids size mismatch");
    }
    for (const int32_t id : batch.input_ids) {
      if (id < 0 || id >= cfg_.vocab_size) {
        throw std::runtime_error("input id out of range: " + std::to_string(id));
      }
    }

    std::vector<int32_t> pos_ids(bs * len);
    for (size_t b = 0; b < bs; ++b) {
      for (size_t l = 0; l < len; ++l) pos_ids[b * len + l] = static_cast<int32_t>(l);
    }

    const Var tok = tape.leaf(&param("embeddings.token"));
    Var x = tape.embedding(tok, batch.input_ids);
    x = tape.add(x, tape.embedding(tape.leaf(&param("embeddings.position")), pos_ids));
    x = tape.add(x, tape.embedding(tape.leaf(&param("embeddings.type")), batch.type_ids));
    x = tape.layer_norm(x, tape.leaf(&param("embeddings.ln.gain")),
                        tape.leaf(&param("embeddings.ln.bias")), T(kLayerNormEps));
    x = tape.dropout(x, cfg_.dropout_p, rng, training);

    // Additive attention mask: 0 on visible key columns, -1e30 on PAD.
    Tensor<T> mask({bs * heads, len, len});
    for (size_t b = 0; b < bs; ++b) {
      for (size_t c = 0; c < len; ++c) {
        const T v = batch.attend_mask[b * len + c] ? T(0) : T(-1e30);
        for (size_t h = 0; h < heads; ++h) {
          T* row0 = mask.data.data() + ((b * heads + h) * len) * len;
          for (size_t r = 0; r < len; ++r) row0[r * len + c] = v;
        }
      }
    }
    const Var mask_var = tape.constant(std::move(mask));

    std::vector<size_t> cls_rows(bs);
    for (size_t b = 0; b < bs; ++b) cls_rows[b] = b * len;

    ForwardGraph<T> out;
    for (int layer = 0; layer < cfg_.n_layers; ++layer) {
      const std::string pfx = "block" + std::to_string(layer) + ".";
      auto linear = [&](Var in, const std::string& w, const std::string& b) {
        return tape.add_rowvec(tape.matmul(in, tape.leaf(&param(pfx + w))),
                               tape.leaf(&param(pfx + b)));
      };

      const Var q = tape.split_heads(linear(x, "attn.wq", "attn.bq"), bs, len, heads);
      const Var k = tape.split_heads(linear(x, "attn.wk", "attn.bk"), bs, len, heads);
      const Var v = tape.split_heads(linear(x, "attn.wv", "attn.bv"), bs, len, heads);

      Var scores = tape.scale(tape.bmm_nt(q, k), T(1) / static_cast<T>(std::sqrt(double(dh))));
      scores = tape.add(scores, mask_var);
      Var probs = tape.softmax_lastdim(scores);
      probs = tape.dropout(probs, cfg_.dropout_p, rng, training);
      Var ctx = tape.merge_heads(tape.bmm(probs, v), bs, len, heads);
      Var attn_out = linear(ctx, "attn.wo", "attn.bo");
      attn_out = tape.dropout(attn_out, cfg_.dropout_p, rng, training);

      // Post-LN residual blocks.
      x = tape.layer_norm(tape.add(x, attn_out), tape.leaf(&param(pfx + "ln1.gain")),
                          tape.leaf(&param(pfx + "ln1.bias")), T(kLayerNormEps));

      Var ff = tape.gelu(linear(x, "ff.w1", "ff.b1"));
      ff = tape.add_rowvec(tape.matmul(ff, tape.leaf(&param(pfx + "ff.w2"))),
                           tape.leaf(&param(pfx + "ff.b2")));
      ff = tape.dropout(ff, cfg_.dropout_p, rng, training);
      x = tape.layer_norm(tape.add(x, ff), tape.leaf(&param(pfx + "ln2.gain")),
                          tape.leaf(&param(pfx + "ln2.bias")), T(kLayerNormEps));

      out.cls_by_layer.push_back(tape.gather_rows(x, cls_rows));
    }

    out.final_hidden = x;

    switch (cfg_.head) {
      case HeadKind::kMlmVocab: {
        Var t = tape.add_rowvec(tape.matmul(x, tape.leaf(&param("head.transform.w"))),
                                tape.leaf(&param("head.transform.b")));
        t = tape.gelu(t);
        t = tape.layer_norm(t, tape.leaf(&param("head.ln.gain")),
                            tape.leaf(&param("head.ln.bias")), T(kLayerNormEps));
        const Var dec = cfg_.tied_embeddings ? tok : tape.leaf(&param("head.decoder.w"));
        out.head_logits =
            tape.add_rowvec(tape.matmul_nt(t, dec), tape.leaf(&param("head.output_bias")));
        break;
      }
      case HeadKind::kTokenClass: {
        out.head_logits = tape.add_rowvec(tape.matmul(x, tape.leaf(&param("head.w"))),
                                          tape.leaf(&param("head.b")));
        break;
      }
      case HeadKind::kSeqClass: {
        const Var cls = out.cls_by_layer.back();
        Var pooled = tape.add_rowvec(tape.matmul(cls, tape.leaf(&param("pooler.w"))),
                                     tape.leaf(&param("pooler.b")));
        pooled = tape.tanh_op(pooled);
        out.head_logits = tape.add_rowvec(tape.matmul(pooled, tape.leaf(&param("classifier.w"))),
                                          tape.leaf(&param("classifier.b")));
        break;
      }
    }
    return out;
  }

  // Evaluation forward: dropout off, results copied out of the tape.
  ForwardOutput forward_eval(const Batch& batch) {
    Tape<T> tape;
    DetRng rng(0);
    const auto graph = forward(tape, batch, /*training=*/false, rng);
    ForwardOutput out;
    for (const auto v : graph.cls_by_layer) {
      const auto& t = tape.val(v);
      out.cls_by_layer.emplace_back(t.data.begin(), t.data.end());
    }
    const auto& logits = tape.val(graph.head_logits);
    out.head_logits.assign(logits.data.begin(), logits.data.end());
    out.logits_shape = logits.shape;
    const auto& hidden = tape.val(graph.final_hidden);
    out.final_hidden.assign(hidden.data.begin(), hidden.data.end());
    return out;
  }

 private:
  void add_param(const std::string& name, std::vector<size_t> shape, bool decay) {
    params_.push_back(Param<T>{name, Tensor<T>(std::move(shape)), decay});
    params_.back().tensor.requires_grad = true;
    index_.emplace(name, params_.size() - 1);
  }

  void build() {
    cfg_.validate();
    const size_t d = static_cast<size_t>(cfg_.d_hidden);
    const size_t ff = static_cast<size_t>(cfg_.d_ff);
    const size_t v = static_cast<size_t>(cfg_.vocab_size);
    const size_t k = static_cast<size_t>(cfg_.label_space);

    add_param("embeddings.token", {v, d}, true);
    add_param("embeddings.position", {static_cast<size_t>(cfg_.max_len), d}, true);
    add_param("embeddings.type", {2, d}, true);
    add_param("embeddings.ln.gain", {d}, false);
    add_param("embeddings.ln.bias", {d}, false);

    for (int layer = 0; layer < cfg_.n_layers; ++layer) {
      const std::string pfx = "block" + std::to_string(layer) + ".";
      add_param(pfx + "attn.wq", {d, d}, true);
      add_param(pfx + "attn.bq", {d}, false);
      add_param(pfx + "attn.wk", {d, d}, true);
      add_param(pfx + "attn.bk", {d}, false);
      add_param(pfx + "attn.wv", {d, d}, true);
      add_param(pfx + "attn.bv", {d}, false);
      add_param(pfx + "attn.wo", {d, d}, true);
      add_param(pfx + "attn.bo", {d}, false);
      add_param(pfx + "ln1.gain", {d}, false);
      add_param(pfx + "ln1.bias", {d}, false);
      add_param(pfx + "ff.w1", {d, ff}, true);
      add_param(pfx + "ff.b1", {ff}, false);
      add_param(pfx + "ff.w2", {ff, d}, true);
      add_param(pfx + "ff.b2", {d}, false);
      add_param(pfx + "ln2.gain", {d}, false);
      add_param(pfx + "ln2.bias", {d}, false);
    }

    switch (cfg_.head) {
      case HeadKind::kMlmVocab:
        if (static_cast<size_t>(cfg_.label_space) != v) {
          throw std::runtime_error("MLM head label space must equal vocab size");
        }
        add_param("head.transform.w", {d, d}, true);
        add_param("head.transform.b", {d}, false);
        add_param("head.ln.gain", {d}, false);
        add_param("head.ln.bias", {d}, false);
        if (!cfg_.tied_embeddings) add_param("head.decoder.w", {v, d}, true);
        add_param("head.output_bias", {v}, false);
        break;
      case HeadKind::kTokenClass:
        add_param("head.w", {d, k}, true);
        add_param("head.b", {k}, false);
        break;
      case HeadKind::kSeqClass:
        add_param("pooler.w", {d, d}, true);
        add_param("pooler.b", {d}, false);
        add_param("classifier.w", {d, k}, true);
        add_param("classifier.b", {k}, false);
        break;
    }
  }

  ModelConfig cfg_;
  std::deque<Param<T>> params_;
  std::map<std::string, size_t> index_;
};

// Checkpoint directory layout: manifest.json (config, step, objective,
// parameter table with byte offsets) + params.bin (row-major little-endian
// 32-bit floats concatenated in manifest order).
struct CheckpointMeta {
  int64_t step = 0;
  std::string objective = "mlm";
  std::string vocab_hash;
  uint64_t rng_state = 0;
};

void save_checkpoint(const Model<float>& model, const std::string& dir,
                     const CheckpointMeta& meta);
std::pair<Model<float>, CheckpointMeta> load_checkpoint(const std::string& dir);

// "fnv1a64:<hex>" over manifest.json and params.bin.
std::string checkpoint_id(const std::string& dir);

}  // namespace bertlab
