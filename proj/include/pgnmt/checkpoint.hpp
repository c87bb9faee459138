#pragma once

#include <cstdint>
#include <limits>
#include <string>

#include "pgnmt/tensor.hpp"
#include "pgnmt/transformer.hpp"

namespace pgnmt {

// Training-resume bookkeeping carried inside the checkpoint header.
struct TrainProgress {
  std::int64_t optimizer_steps = 0;
  int epochs_completed = 0;
  double best_heldout = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;
};

struct Checkpoint {
  ModelParams params;
  std::uint64_t vocab_hash = 0;
  std::uint64_t seed = 0;
  TrainProgress progress;
  AdamState adam;  // moments populated only when the file carried them
  bool has_adam = false;
};

// Byte format: 8-byte magic "PGNCKPT1"; little-endian u64 header length; that
// many bytes of UTF-8 JSON (config, vocab hash, seed, step count, progress,
// and a named manifest of {name, shape, offset}); then little-endian float64
// arrays in manifest order. Offsets are relative to the payload start.
// Optimizer moments, when present, ride along as manifest entries "adam.m"
// and "adam.v" over the concatenated flattened parameters.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     std::uint64_t vocab_hash, std::uint64_t seed,
                     const TrainProgress& progress, const AdamState* adam = nullptr);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace pgnmt
