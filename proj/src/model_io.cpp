#include <cstring>
#include <filesystem>
#include <fstream>

#include "bertlab/io.hpp"
#include "bertlab/model.hpp"
#include "json.hpp"

namespace bertlab {

namespace fs = std::filesystem;

std::string head_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::kMlmVocab:
      return "mlm-vocab";
    case HeadKind::kTokenClass:
      return "token-class";
    case HeadKind::kSeqClass:
      return "seq-class";
  }
  throw std::logic_error("unknown head kind");
}

HeadKind head_from_name(const std::string& name) {
  if (name == "mlm-vocab") return HeadKind::kMlmVocab;
  if (name == "token-class") return HeadKind::kTokenClass;
  if (name == "seq-class") return HeadKind::kSeqClass;
  throw std::runtime_error("unknown head kind: " + name);
}

HeadKind head_for(ObjectiveKind objective) {
  return objective == ObjectiveKind::kMlm ? HeadKind::kMlmVocab : HeadKind::kTokenClass;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  ModelConfig cfg;
  cfg.preset = name;
  if (name == "base") {
    cfg.n_layers = 12;
    cfg.n_heads = 12;
    cfg.d_hidden = 768;
    cfg.d_ff = 3072;
  } else if (name == "medium") {
    cfg.n_layers = 8;
    cfg.n_heads = 8;
    cfg.d_hidden = 512;
    cfg.d_ff = 2048;
  } else if (name == "small") {
    cfg.n_layers = 4;
    cfg.n_heads = 8;
    cfg.d_hidden = 512;
    cfg.d_ff = 2048;
  } else if (name == "tiny") {
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_hidden = 64;
    cfg.d_ff = 256;
  } else {
    throw std::runtime_error("unknown preset: " + name +
                             " (expected base, medium, small, or tiny)");
  }
  return cfg;
}

void ModelConfig::validate() const {
  if (n_layers <= 0 || n_heads <= 0 || d_hidden <= 0 || d_ff <= 0 || max_len <= 0) {
    throw std::runtime_error("model config extents must be positive");
  }
  if (d_hidden % n_heads != 0) {
    throw std::runtime_error("d_hidden (" + std::to_string(d_hidden) +
                             ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
  }
  if (vocab_size <= Vocab::kNumSpecials) {
    throw std::runtime_error("vocab_size must exceed the special-token count");
  }
  if (label_space <= 0) throw std::runtime_error("label_space must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
    throw std::runtime_error("dropout_p must be in [0, 1)");
  }
}

Batch Batch::from_ids(const std::vector<std::vector<int32_t>>& sequences) {
  Batch b;
  if (sequences.empty()) throw std::runtime_error("empty batch");
  b.batch_size = sequences.size();
  b.len = sequences[0].size();
  b.input_ids.reserve(b.batch_size * b.len);
  for (const auto& seq : sequences) {
    if (seq.size() != b.len) throw std::runtime_error("ragged batch");
    b.input_ids.insert(b.input_ids.end(), seq.begin(), seq.end());
  }
  b.type_ids.assign(b.batch_size * b.len, 0);
  b.attend_mask.resize(b.batch_size * b.len);
  for (size_t i = 0; i < b.input_ids.size(); ++i) {
    b.attend_mask[i] = b.input_ids[i] != Vocab::kPad;
  }
  return b;
}

namespace {

nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["d_hidden"] = cfg.d_hidden;
  j["d_ff"] = cfg.d_ff;
  j["max_len"] = cfg.max_len;
  j["vocab_size"] = cfg.vocab_size;
  j["dropout_p"] = cfg.dropout_p;
  j["label_space"] = cfg.label_space;
  j["preset"] = cfg.preset;
  j["tied_embeddings"] = cfg.tied_embeddings;
  j["head"] = head_name(cfg.head);
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_hidden = j.at("d_hidden").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.max_len = j.at("max_len").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.dropout_p = j.at("dropout_p").get<double>();
  cfg.label_space = j.at("label_space").get<int>();
  cfg.preset = j.at("preset").get<std::string>();
  cfg.tied_embeddings = j.at("tied_embeddings").get<bool>();
  cfg.head = head_from_name(j.at("head").get<std::string>());
  return cfg;
}

}  // namespace

void save_checkpoint(const Model<float>& model, const std::string& dir,
                     const CheckpointMeta& meta) {
  fs::create_directories(dir);
  nlohmann::json j;
  j["format"] = "bertlab-checkpoint-v1";
  j["config"] = config_to_json(model.config());
  j["step"] = meta.step;
  j["objective"] = meta.objective;
  j["vocab_hash"] = meta.vocab_hash;
  j["rng_state"] = meta.rng_state;

  auto& table = j["params"] = nlohmann::json::array();
  size_t offset = 0;
  std::string bin;
  for (const auto& p : model.params()) {
    nlohmann::json entry;
    entry["name"] = p.name;
    entry["shape"] = p.tensor.shape;
    entry["offset"] = offset;
    table.push_back(entry);
    const size_t bytes = p.tensor.numel() * sizeof(float);
    const size_t start = bin.size();
    bin.resize(start + bytes);
    std::memcpy(bin.data() + start, p.tensor.data.data(), bytes);
    offset += bytes;
  }

  write_file((fs::path(dir) / "manifest.json").string(), j.dump(2));
  write_file((fs::path(dir) / "params.bin").string(), bin);
}

std::pair<Model<float>, CheckpointMeta> load_checkpoint(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt manifest: " + manifest_path + ": " + e.what());
  }
  if (j.value("format", "") != "bertlab-checkpoint-v1") {
    throw std::runtime_error("corrupt manifest: unknown format in " + manifest_path);
  }

  ModelConfig cfg;
  CheckpointMeta meta;
  try {
    cfg = config_from_json(j.at("config"));
    meta.step = j.at("step").get<int64_t>();
    meta.objective = j.at("objective").get<std::string>();
    meta.vocab_hash = j.value("vocab_hash", "");
    meta.rng_state = j.value("rng_state", uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt manifest: " + manifest_path + ": " + e.what());
  }

  Model<float> model(cfg);

  // The parameter table must agree with the freshly built model layout.
  const auto& table = j.at("params");
  if (table.size() != model.params().size()) {
    throw std::runtime_error("shape mismatch: checkpoint has " + std::to_string(table.size()) +
                             " parameters, config implies " +
                             std::to_string(model.params().size()));
  }
  size_t expected_offset = 0;
  size_t i = 0;
  for (auto& p : model.params()) {
    const auto& entry = table.at(i++);
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<size_t>>();
    const auto offset = entry.at("offset").get<size_t>();
    if (name != p.name || shape != p.tensor.shape) {
      throw std::runtime_error("shape mismatch: parameter " + p.name + " expects " +
                               shape_str(p.tensor.shape) + ", manifest has " + name + " " +
                               shape_str(shape));
    }
    if (offset != expected_offset) {
      throw std::runtime_error("corrupt manifest: bad offset for " + name);
    }
    expected_offset += p.tensor.numel() * sizeof(float);
  }

  const std::string bin = read_file((fs::path(dir) / "params.bin").string());
  if (bin.size() != expected_offset) {
    throw std::runtime_error("truncated checkpoint: params.bin has " +
                             std::to_string(bin.size()) + " bytes, expected " +
                             std::to_string(expected_offset));
  }
  size_t offset = 0;
  for (auto& p : model.params()) {
    const size_t bytes = p.tensor.numel() * sizeof(float);
    std::memcpy(p.tensor.data.data(), bin.data() + offset, bytes);
    offset += bytes;
  }
  return {std::move(model), std::move(meta)};
}

std::string checkpoint_id(const std::string& dir) {
  const auto manifest = read_file((fs::path(dir) / "manifest.json").string());
  const auto params = read_file((fs::path(dir) / "params.bin").string());
  return "fnv1a64:" + to_hex(fnv1a64(params, fnv1a64(manifest)));
}

}  // namespace bertlab
