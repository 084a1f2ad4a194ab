#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tidsit/checkpoint.hpp"
#include "tidsit/data.hpp"
#include "tidsit/errors.hpp"
#include "tidsit/evaluation.hpp"
#include "tidsit/training.hpp"

namespace py = pybind11;
using namespace tidsit;

namespace {

TrainConfig config_from_overrides(const std::map<std::string, std::string>& kv,
                                  TrainConfig base = {}) {
  std::string text;
  for (const auto& [k, v] : kv) text += k + "=" + v + "\n";
  return parse_config(text, base);
}

py::dict report_to_dict(const EvalReport& report) {
  py::dict d;
  d["rmse"] = report.rmse;
  d["rmse_percent"] = report.rmse_percent;
  d["history_mode"] = to_string(report.history_mode);
  d["config_hash"] = report.config_hash;
  py::list rows;
  for (const EvalRow& r : report.rows) {
    rows.append(py::make_tuple(r.battery_id, r.cycle_index, r.soh_true,
                               r.soh_pred));
  }
  d["rows"] = rows;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "SoH estimation from raw discharge cycles (C++ core)";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<NumericError>(m, "NumericError");
  py::register_exception<IoError>(m, "IoError");

  m.def("compute_soh", &compute_soh, py::arg("c_current_ah"),
        py::arg("c_rated_ah"), "Capacity ratio C_current / C_rated.");

  m.def("rmse", &rmse, py::arg("preds"), py::arg("targets"));
  m.def("rmse_percent", &rmse_percent, py::arg("preds"), py::arg("targets"));

  m.def(
      "synth",
      [](const std::string& out, std::size_t n, std::uint64_t seed,
         std::size_t t_min, std::size_t t_max) {
        save_cycles(generate_synthetic(n, t_min, t_max, seed), out);
      },
      py::arg("out"), py::arg("n") = 50, py::arg("seed") = 7,
      py::arg("t_min") = 24, py::arg("t_max") = 64,
      "Write a synthetic degradation dataset (csv + .meta sidecar).");

  m.def(
      "train",
      [](const std::string& data, const std::string& out,
         const std::map<std::string, std::string>& overrides) {
        TrainConfig config = config_from_overrides(overrides);
        config.validate();
        CycleSet set = load_cycles(data);
        TrainResult result = run_training_pipeline(set, config, out);
        py::dict d;
        d["checkpoint"] = out;
        d["epochs"] = config.epochs;
        d["best_val_rmse"] = result.best_val_rmse;
        d["config_hash"] = config_hash(config);
        return d;
      },
      py::arg("data"), py::arg("out"),
      py::arg("overrides") = std::map<std::string, std::string>{},
      "Train on a cycle file and write a checkpoint.");

  m.def(
      "evaluate",
      [](const std::string& ckpt_path, const std::string& data,
         const std::string& history_mode) {
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        HistoryMode mode = history_mode.empty()
                               ? ckpt.config.eval_history
                               : history_mode_from_string(history_mode);
        CycleSet set = load_cycles(data);
        return report_to_dict(
            evaluate(ckpt.params, ckpt.stats, set, ckpt.config, mode));
      },
      py::arg("ckpt"), py::arg("data"), py::arg("history_mode") = "",
      "Evaluate a checkpoint on a cycle file.");

  m.def(
      "predict",
      [](const std::string& ckpt_path, const std::string& cycle_file) {
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        CycleSet data = load_cycles(cycle_file);
        const Cycle& target = data.cycles.back();
        auto cycles = data.battery_cycles(target.battery_id);
        std::vector<double> soh_seq;
        for (const Cycle* c : cycles) soh_seq.push_back(data.soh_of(*c));
        PaddedCycle padded = pad_and_mask(
            target, ckpt.stats, ckpt.config.model.pad_len,
            build_history(soh_seq, cycles.size() - 1,
                          ckpt.config.model.history_window),
            soh_seq.back());
        return predict_soh(ckpt.params, padded);
      },
      py::arg("ckpt"), py::arg("cycle_file"),
      "SoH prediction for the last cycle in the file.");

  m.def(
      "gradcheck",
      [](std::uint64_t seed, double eps,
         const std::map<std::string, std::string>& overrides) {
        TrainConfig config = gradcheck_toy_config(seed);
        config = config_from_overrides(overrides, config);
        config.seed = seed;
        config.validate();
        return model_gradient_check(config, 3, eps).max_rel_error;
      },
      py::arg("seed") = 1, py::arg("eps") = 1e-6,
      py::arg("overrides") = std::map<std::string, std::string>{},
      "Max relative error of reverse-mode vs finite-difference gradients.");

  m.def("default_config", []() {
    py::dict d;
    std::istringstream text(serialize_config(TrainConfig{}));
    std::string line;
    while (std::getline(text, line)) {
      auto eq = line.find('=');
      if (eq != std::string::npos) {
        d[py::str(line.substr(0, eq))] = line.substr(eq + 1);
      }
    }
    return d;
  });
}
