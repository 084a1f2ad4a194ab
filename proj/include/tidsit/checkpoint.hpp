#pragma once

#include <string>

#include "tidsit/data.hpp"
#include "tidsit/model.hpp"
#include "tidsit/training.hpp"

namespace tidsit {

struct Checkpoint {
  ModelParams params;
  NormalizationStats stats;
  TrainConfig config;
};

/// Self-describing binary container: magic + version, the canonical config
/// text, the normalization stats, then parameter path -> shape -> raw 64-bit
/// little-endian values, sorted by path. Written atomically.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const NormalizationStats& stats,
                     const TrainConfig& config);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace tidsit
