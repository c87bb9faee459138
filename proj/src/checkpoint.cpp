#include "pgnmt/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <unordered_map>

#include <json.hpp>

#include "pgnmt/errors.hpp"
#include "pgnmt/util.hpp"

namespace pgnmt {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

constexpr char kMagic[8] = {'P', 'G', 'N', 'C', 'K', 'P', 'T', '1'};

using nlohmann::json;

json config_to_json(const ModelConfig& c) {
  json j;
  j["num_layers"] = c.num_layers;
  j["num_heads"] = c.num_heads;
  j["hidden_size"] = c.hidden_size;
  j["ffn_size"] = c.ffn_size;
  j["max_len"] = c.max_len;
  j["dropout"] = c.dropout;
  j["vocab_size"] = c.vocab_size;
  j["pgn_enabled"] = c.pgn_enabled;
  j["pgn_head_mode"] = c.pgn_head_mode == PgnHeadMode::kAveraged ? "averaged" : "single";
  j["pgn_head_index"] = c.pgn_head_index;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.num_layers = j.at("num_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.hidden_size = j.at("hidden_size").get<Index>();
    c.ffn_size = j.at("ffn_size").get<Index>();
    c.max_len = j.at("max_len").get<Index>();
    c.dropout = j.at("dropout").get<double>();
    c.vocab_size = j.at("vocab_size").get<Index>();
    c.pgn_enabled = j.at("pgn_enabled").get<bool>();
    const std::string mode = j.at("pgn_head_mode").get<std::string>();
    if (mode == "averaged") {
      c.pgn_head_mode = PgnHeadMode::kAveraged;
    } else if (mode == "single") {
      c.pgn_head_mode = PgnHeadMode::kSingle;
    } else {
      throw ValidationError("checkpoint: unknown pgn_head_mode \"" + mode + "\"");
    }
    c.pgn_head_index = j.at("pgn_head_index").get<int>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: malformed config: ") + e.what());
  }
  return c;
}

void append_doubles(std::string& out, std::span<const double> values) {
  const std::size_t bytes = values.size() * sizeof(double);
  const std::size_t at = out.size();
  out.resize(at + bytes);
  std::memcpy(out.data() + at, values.data(), bytes);
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     std::uint64_t vocab_hash, std::uint64_t seed,
                     const TrainProgress& progress, const AdamState* adam) {
  auto entries = params.manifest();
  const Index total = params.param_count();
  if (adam != nullptr && !adam->m.empty() &&
      static_cast<Index>(adam->m.size()) != total) {
    throw ContractError("checkpoint: optimizer moments cover " +
                        std::to_string(adam->m.size()) + " values but the model has " +
                        std::to_string(total));
  }

  json manifest = json::array();
  std::uint64_t offset = 0;
  auto add_entry = [&](const std::string& name, const Shape& shape, Index numel) {
    json e;
    e["name"] = name;
    e["shape"] = shape;
    e["offset"] = offset;
    manifest.push_back(std::move(e));
    offset += static_cast<std::uint64_t>(numel) * sizeof(double);
  };
  for (const auto& entry : entries) add_entry(entry.name, entry.tensor.shape(), entry.tensor.numel());
  const bool with_adam = adam != nullptr && !adam->m.empty();
  if (with_adam) {
    add_entry("adam.m", {total}, total);
    add_entry("adam.v", {total}, total);
  }

  json header;
  header["config"] = config_to_json(params.config);
  header["vocab_hash"] = to_hex(vocab_hash);
  header["seed"] = seed;
  header["step"] = with_adam ? adam->step : progress.optimizer_steps;
  header["epochs_completed"] = progress.epochs_completed;
  header["best_heldout"] =
      std::isfinite(progress.best_heldout) ? json(progress.best_heldout) : json(nullptr);
  header["epochs_since_best"] = progress.epochs_since_best;
  header["manifest"] = std::move(manifest);
  const std::string header_bytes = header.dump();

  std::string out;
  out.reserve(16 + header_bytes.size() + static_cast<std::size_t>(offset));
  out.append(kMagic, sizeof(kMagic));
  const std::uint64_t header_len = header_bytes.size();
  out.append(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.append(header_bytes);
  for (const auto& entry : entries) append_doubles(out, entry.tensor.values());
  if (with_adam) {
    append_doubles(out, adam->m);
    append_doubles(out, adam->v);
  }
  write_text_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_text_file(path);
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("checkpoint " + path + ": missing PGNCKPT1 magic");
  }
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + sizeof(kMagic), sizeof(header_len));
  const std::size_t header_at = sizeof(kMagic) + sizeof(std::uint64_t);
  if (header_at + header_len > bytes.size()) {
    throw ValidationError("checkpoint " + path + ": truncated header");
  }

  json header;
  try {
    header = json::parse(bytes.substr(header_at, header_len));
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint " + path + ": header is not valid JSON: " + e.what());
  }

  Checkpoint ckpt;
  ckpt.params = ModelParams::zeros(config_from_json(header.at("config")));
  try {
    ckpt.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.progress.optimizer_steps = header.at("step").get<std::int64_t>();
    ckpt.progress.epochs_completed = header.at("epochs_completed").get<int>();
    const json& best = header.at("best_heldout");
    ckpt.progress.best_heldout =
        best.is_null() ? std::numeric_limits<double>::infinity() : best.get<double>();
    ckpt.progress.epochs_since_best = header.at("epochs_since_best").get<int>();
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint " + path + ": malformed header field: " + e.what());
  }

  const std::size_t payload_at = header_at + header_len;
  const std::size_t payload_len = bytes.size() - payload_at;

  std::unordered_map<std::string, Tensor> by_name;
  for (auto& entry : ckpt.params.manifest()) by_name.emplace(entry.name, entry.tensor);
  const Index total = ckpt.params.param_count();

  auto read_array = [&](const json& e, std::span<double> dst, const Shape& want_shape) {
    const Shape shape = e.at("shape").get<Shape>();
    if (!want_shape.empty() && shape != want_shape) {
      throw ValidationError("checkpoint " + path + ": \"" + e.at("name").get<std::string>() +
                            "\" has shape " + shape_str(shape) + ", expected " +
                            shape_str(want_shape));
    }
    const std::uint64_t off = e.at("offset").get<std::uint64_t>();
    const std::size_t nbytes = dst.size() * sizeof(double);
    if (off + nbytes > payload_len) {
      throw ValidationError("checkpoint " + path + ": \"" + e.at("name").get<std::string>() +
                            "\" extends past end of file");
    }
    std::memcpy(dst.data(), bytes.data() + payload_at + off, nbytes);
  };

  std::size_t params_seen = 0;
  for (const json& e : header.at("manifest")) {
    const std::string name = e.at("name").get<std::string>();
    if (name == "adam.m" || name == "adam.v") {
      auto& vec = name == "adam.m" ? ckpt.adam.m : ckpt.adam.v;
      vec.assign(static_cast<std::size_t>(total), 0.0);
      read_array(e, vec, {total});
      continue;
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ValidationError("checkpoint " + path + ": unexpected parameter \"" + name + "\"");
    }
    read_array(e, it->second.values_mut(), it->second.shape());
    ++params_seen;
  }
  if (params_seen != by_name.size()) {
    throw ValidationError("checkpoint " + path + ": manifest lists " +
                          std::to_string(params_seen) + " parameters, model needs " +
                          std::to_string(by_name.size()));
  }
  ckpt.has_adam = !ckpt.adam.m.empty() && !ckpt.adam.v.empty();
  if (ckpt.has_adam) ckpt.adam.step = ckpt.progress.optimizer_steps;
  return ckpt;
}

}  // namespace pgnmt
