#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tidsit/autodiff.hpp"
#include "tidsit/data.hpp"
#include "tidsit/gradcheck.hpp"
#include "tidsit/model.hpp"

namespace tidsit {

enum class HistoryMode { ground_truth, autoregressive };

std::string to_string(HistoryMode mode);
HistoryMode history_mode_from_string(const std::string& s);

/// Every knob of a run in one serializable record; the defaults reproduce the
/// reference configuration.
struct TrainConfig {
  ModelConfig model;
  AblationSwitches switches;
  std::size_t batch_size = 16;
  std::size_t epochs = 200;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 0.0;  // 0 = off
  double val_fraction = 0.2;
  std::uint64_t seed = 42;
  HistoryMode eval_history = HistoryMode::ground_truth;

  void validate() const;
};

/// Canonical key=value serialization (fixed key order); equal configs have
/// equal text and equal hashes.
std::string serialize_config(const TrainConfig& config);
/// Applies key=value lines from `text` on top of `base`; unknown keys error.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config_file(const std::string& path, TrainConfig base = {});
std::string config_hash(const TrainConfig& config);

struct TrainLogEntry {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_rmse = 0.0;  // NaN when no validation set
  double seconds = 0.0;
};

struct TrainLog {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<TrainLogEntry> entries;

  void save(const std::string& path) const;
};

struct TrainResult {
  ModelParams params;
  NormalizationStats stats;
  TrainLog log;
  double best_val_rmse = 0.0;  // NaN when no validation set
};

/// Mean squared error over a batch of scalar prediction nodes.
Tape::NodeId mse_loss(Tape& tape, const std::vector<Tape::NodeId>& preds,
                      const std::vector<double>& targets);
double mse(const std::vector<double>& preds,
           const std::vector<double>& targets);

/// Adam moment buffers, keyed by parameter path.
struct AdamState {
  ParamMap m;
  ParamMap v;
  long step = 0;
};

/// Bias-corrected adaptive moment update, in place.
void optimizer_step(ModelParams& params, const ParamMap& grads,
                    AdamState& state, double lr, double beta1, double beta2,
                    double eps);

/// Fits normalization on `train_set`, then runs seeded mini-batch training
/// with ground-truth history vectors. Returns the parameters with the best
/// validation RMSE (final-epoch parameters when `val_set` is empty). When
/// `checkpoint_path` is non-empty a checkpoint is written after every epoch.
TrainResult train(const CycleSet& train_set, const CycleSet& val_set,
                  const TrainConfig& config,
                  const std::string& checkpoint_path = "");

/// Temporally contiguous holdout: the last `val_fraction` of each battery's
/// cycles become the validation set.
std::pair<CycleSet, CycleSet> split_train_val(const CycleSet& set,
                                              double val_fraction);

/// split_train_val + train, the one pipeline shared by the CLI and the
/// ablation runner.
TrainResult run_training_pipeline(const CycleSet& train_set,
                                  const TrainConfig& config,
                                  const std::string& checkpoint_path = "");

struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::size_t n_parameters = 0;
  std::size_t n_scalars = 0;
};

/// Reverse-mode gradients of the batch MSE loss against the central
/// finite-difference oracle, over every named parameter, on a synthetic
/// batch. The toy default configuration keeps this under a few seconds.
GradientCheckResult model_gradient_check(const TrainConfig& config,
                                         std::size_t n_cycles, double eps,
                                         double floor = 1e-4);

/// Toy dimensions used by the gradcheck subcommand.
TrainConfig gradcheck_toy_config(std::uint64_t seed);

}  // namespace tidsit
