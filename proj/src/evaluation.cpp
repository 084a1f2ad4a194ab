#include "tidsit/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tidsit/errors.hpp"
#include "tidsit/io_util.hpp"

namespace tidsit {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch())
      .count();
}

}  // namespace

double rmse(const std::vector<double>& preds,
            const std::vector<double>& targets) {
  if (preds.empty() || preds.size() != targets.size()) {
    throw NumericError("rmse requires equal-length non-empty inputs");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - targets[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(preds.size()));
}

double rmse_percent(const std::vector<double>& preds,
                    const std::vector<double>& targets) {
  if (preds.empty() || preds.size() != targets.size()) {
    throw NumericError("rmse_percent requires equal-length non-empty inputs");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!(targets[i] > 0.0)) {
      throw NumericError("rmse_percent requires strictly positive targets");
    }
    const double d = (preds[i] - targets[i]) / targets[i];
    acc += d * d;
  }
  return 100.0 * std::sqrt(acc / static_cast<double>(preds.size()));
}

void EvalReport::save(const std::string& path) const {
  std::ostringstream s;
  s << "# tidsit evaluation report\n";
  s << "format_version=1\n";
  s << "history_mode=" << to_string(history_mode) << "\n";
  s << "config_hash=" << config_hash << "\n";
  s << "n_cycles=" << rows.size() << "\n";
  s << "rmse=" << fmt(rmse) << "\n";
  s << "rmse_percent=" << fmt(rmse_percent) << "\n";
  s << "battery_id,cycle_index,soh_true,soh_pred\n";
  for (const EvalRow& r : rows) {
    s << r.battery_id << ',' << r.cycle_index << ',' << fmt(r.soh_true) << ','
      << fmt(r.soh_pred) << "\n";
  }
  atomic_write_file(path, s.str());
}

std::string EvalReport::summary() const {
  std::ostringstream s;
  char line[160];
  std::snprintf(line, sizeof(line),
                "evaluated %zu cycles (history=%s): RMSE %.6f, RMSE%% %.4f "
                "[%.1fs]",
                rows.size(), to_string(history_mode).c_str(), rmse,
                rmse_percent, wall_seconds);
  s << line;
  return s.str();
}

EvalReport evaluate(const ModelParams& params, const NormalizationStats& stats,
                    const CycleSet& test_set, const TrainConfig& config,
                    HistoryMode mode) {
  const double t0 = now_seconds();
  EvalReport report;
  report.history_mode = mode;
  report.config_hash = config_hash(config);

  const std::size_t pad_len = config.model.pad_len;
  const std::size_t p = config.model.history_window;
  std::vector<double> preds, targets;
  for (const std::string& bat : test_set.battery_ids()) {
    auto cycles = test_set.battery_cycles(bat);
    std::vector<double> true_soh;
    true_soh.reserve(cycles.size());
    for (const Cycle* c : cycles) true_soh.push_back(test_set.soh_of(*c));
    std::vector<double> pred_soh;  // feeds autoregressive history
    for (std::size_t i = 0; i < cycles.size(); ++i) {
      const std::vector<double>& source =
          mode == HistoryMode::ground_truth ? true_soh : pred_soh;
      PaddedCycle padded = pad_and_mask(*cycles[i], stats, pad_len,
                                        build_history(source, i, p),
                                        true_soh[i]);
      const double pred = predict_soh(params, padded);
      // fed-back history stays inside the (0, 1.2] label range
      pred_soh.push_back(std::clamp(pred, 1e-6, 1.2));
      preds.push_back(pred);
      targets.push_back(true_soh[i]);
      report.rows.push_back(
          {bat, cycles[i]->cycle_index, true_soh[i], pred});
    }
  }
  report.rmse = rmse(preds, targets);
  report.rmse_percent = rmse_percent(preds, targets);
  report.wall_seconds = now_seconds() - t0;
  return report;
}

void AblationTable::save(const std::string& path) const {
  std::ostringstream s;
  s << "configuration,rmse,rmse_percent\n";
  for (const AblationRow& r : rows) {
    s << r.name << ',' << fmt(r.rmse) << ',' << fmt(r.rmse_percent) << "\n";
  }
  atomic_write_file(path, s.str());
}

std::string AblationTable::summary() const {
  std::ostringstream s;
  s << "configuration                  RMSE      RMSE%   train[s]\n";
  for (const AblationRow& r : rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-28s %9.6f %8.4f %9.1f\n",
                  r.name.c_str(), r.rmse, r.rmse_percent, r.train_seconds);
    s << line;
  }
  return s.str();
}

AblationTable run_ablation(const CycleSet& train_set, const CycleSet& test_set,
                           const TrainConfig& base_config) {
  struct Variant {
    const char* name;
    AblationSwitches switches;
  };
  AblationSwitches full;
  std::vector<Variant> variants = {
      {"full", full},
      {"wo_variate_embedding", full},
      {"wo_history_embedding", full},
      {"wo_temporal_attention", full},
      {"wo_time_embedding", full},
  };
  variants[1].switches.use_variate_embedding = false;
  variants[2].switches.use_history = false;
  variants[3].switches.use_temporal_attention = false;
  variants[4].switches.use_time_embedding = false;

  AblationTable table;
  for (const Variant& variant : variants) {
    TrainConfig config = base_config;
    config.switches = variant.switches;
    const double t0 = now_seconds();
    TrainResult result = run_training_pipeline(train_set, config);
    const double train_seconds = now_seconds() - t0;
    EvalReport report = evaluate(result.params, result.stats, test_set,
                                 config, config.eval_history);
    table.rows.push_back({variant.name, variant.switches, report.rmse,
                          report.rmse_percent, train_seconds});
  }
  return table;
}

void emit_plot_data(const EvalReport& report, const std::string& path) {
  if (report.rows.empty()) {
    throw NumericError("cannot emit plot data from an empty report");
  }
  std::ostringstream s;
  s << "cycle_index,soh_true,soh_pred\n";
  for (const EvalRow& r : report.rows) {
    s << r.cycle_index << ',' << fmt(r.soh_true) << ',' << fmt(r.soh_pred)
      << "\n";
  }
  atomic_write_file(path, s.str());
}

}  // namespace tidsit
