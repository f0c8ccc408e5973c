// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: magic "DINATIR1", little-endian u64 header length,
// JSON header (config, iteration, seed, tensor manifest with byte offsets),
// then the concatenated little-endian f32 payload. Round trips are bit-exact.

#pragma once

#include <string>

#include "dinat/model.hpp"
#include "dinat/train.hpp"

namespace dinat {

struct CheckpointMeta {
  ModelConfig config;
  uint64_t iteration = 0;
  uint64_t seed = 0;
};

void save_checkpoint(const Model<float>& model, const std::string& path, uint64_t iteration = 0,
                     uint64_t seed = 0);

// Rebuilds the model from the embedded config and overwrites every parameter
// from the payload. Validates the magic, manifest bounds (non-overlapping,
// exhaustive) and that the manifest matches the config's parameter set.
Model<float> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

// JSON (de)serialization of configs; file variants throw DataError on
// missing files and ConfigError on invalid content.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace dinat
