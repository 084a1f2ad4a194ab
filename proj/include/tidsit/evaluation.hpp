#pragma once

#include <string>
#include <vector>

#include "tidsit/data.hpp"
#include "tidsit/model.hpp"
#include "tidsit/training.hpp"

namespace tidsit {

double rmse(const std::vector<double>& preds,
            const std::vector<double>& targets);

/// Relative RMSE in percent: 100 * sqrt(mean(((pred-target)/target)^2)).
double rmse_percent(const std::vector<double>& preds,
                    const std::vector<double>& targets);

struct EvalRow {
  std::string battery_id;
  std::uint32_t cycle_index = 0;
  double soh_true = 0.0;
  double soh_pred = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double rmse = 0.0;
  double rmse_percent = 0.0;
  HistoryMode history_mode = HistoryMode::ground_truth;
  std::string config_hash;
  double wall_seconds = 0.0;  // stdout summary only, kept out of files

  /// Machine-readable structured text (deterministic byte-for-byte).
  void save(const std::string& path) const;
  std::string summary() const;
};

/// Predicts every cycle of `test_set` in eval mode; history vectors come
/// from ground truth or from the model's own earlier predictions per `mode`.
EvalReport evaluate(const ModelParams& params, const NormalizationStats& stats,
                    const CycleSet& test_set, const TrainConfig& config,
                    HistoryMode mode);

struct AblationRow {
  std::string name;
  AblationSwitches switches;
  double rmse = 0.0;
  double rmse_percent = 0.0;
  double train_seconds = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  void save(const std::string& path) const;  // timings stay on stdout
  std::string summary() const;
};

/// Trains and evaluates the full model plus the four single-removal variants
/// under identical seeds.
AblationTable run_ablation(const CycleSet& train_set, const CycleSet& test_set,
                           const TrainConfig& base_config);

/// Delimited text with columns cycle_index,soh_true,soh_pred.
void emit_plot_data(const EvalReport& report, const std::string& path);

}  // namespace tidsit
