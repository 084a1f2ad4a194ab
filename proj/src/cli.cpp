#include "tidsit/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "tidsit/checkpoint.hpp"
#include "tidsit/data.hpp"
#include "tidsit/errors.hpp"
#include "tidsit/evaluation.hpp"
#include "tidsit/training.hpp"

namespace tidsit {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 5;

/// Relative data paths resolve against $TIDSIT_DATA_DIR when set.
std::string resolve_data_path(const std::string& path) {
  namespace fs = std::filesystem;
  const char* dir = std::getenv("TIDSIT_DATA_DIR");
  if (dir && *dir && fs::path(path).is_relative() && !fs::exists(path)) {
    fs::path joined = fs::path(dir) / path;
    if (fs::exists(joined)) return joined.string();
  }
  return path;
}

std::vector<std::string> split_ids(const std::string& csv) {
  std::vector<std::string> ids;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) ids.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) ids.push_back(cur);
  return ids;
}

CycleSet select_batteries(const CycleSet& set, const std::string& ids_csv) {
  if (ids_csv.empty()) return set;
  auto ids = split_ids(ids_csv);
  auto known = set.battery_ids();
  CycleSet out;
  for (const std::string& id : ids) {
    if (std::find(known.begin(), known.end(), id) == known.end()) {
      throw ConfigError("unknown battery id " + id);
    }
    out.rated_capacity_ah[id] = set.rated_capacity_ah.at(id);
  }
  for (const Cycle& c : set.cycles) {
    if (std::find(ids.begin(), ids.end(), c.battery_id) != ids.end()) {
      out.cycles.push_back(c);
    }
  }
  return out;
}

struct ConfigFlags {
  std::string config_path;
  std::string set_pairs;  // comma-separated key=value overrides
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.config_path,
                  "key=value config file (defaults are the reference configuration)");
  cmd->add_option("--set", flags.set_pairs,
                  "comma-separated config overrides, e.g. epochs=50,hidden=8");
  cmd->add_option("--seed", flags.seed, "global seed")
      ->each([&flags](const std::string&) { flags.seed_given = true; });
}

TrainConfig resolve_config(const ConfigFlags& flags) {
  TrainConfig config;
  if (!flags.config_path.empty()) {
    config = load_config_file(flags.config_path, config);
  }
  if (!flags.set_pairs.empty()) {
    std::string text = flags.set_pairs;
    for (char& c : text) {
      if (c == ',') c = '\n';
    }
    config = parse_config(text, config);
  }
  if (flags.seed_given) config.seed = flags.seed;
  config.validate();
  return config;
}

void print_run_header(const TrainConfig& config) {
  std::cout << "# resolved config (hash " << config_hash(config) << ")\n"
            << serialize_config(config) << std::flush;
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"TIDSIT: state-of-health estimation from raw discharge cycles",
               "tidsit"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "fit a model and checkpoint it");
  std::string train_data, train_out = "tidsit.ckpt", train_log, train_ids;
  ConfigFlags train_flags;
  train_cmd->add_option("--data", train_data, "cycle file")->required();
  train_cmd->add_option("--out", train_out, "checkpoint output path");
  train_cmd->add_option("--log", train_log, "per-epoch training log (csv)");
  train_cmd->add_option("--train-ids", train_ids,
                        "comma-separated battery ids (default: all)");
  add_config_flags(train_cmd, train_flags);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_split, eval_report, eval_plot,
      eval_history;
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--data", eval_data, "cycle file")->required();
  eval_cmd->add_option("--split", eval_split,
                       "battery ids to evaluate (default: all)");
  eval_cmd->add_option("--report", eval_report, "report output path");
  eval_cmd->add_option("--plot", eval_plot, "plot-data output path");
  eval_cmd->add_option("--history-mode", eval_history,
                       "ground_truth|autoregressive (default: checkpoint)");

  // ablate
  auto* ablate_cmd =
      app.add_subcommand("ablate", "train full model and the four removals");
  std::string ab_data, ab_train_ids, ab_test_ids, ab_test_data, ab_out;
  ConfigFlags ab_flags;
  ablate_cmd->add_option("--data", ab_data, "cycle file")->required();
  ablate_cmd->add_option("--train-ids", ab_train_ids,
                         "train battery ids (with --test-ids)");
  ablate_cmd->add_option("--test-ids", ab_test_ids, "test battery ids");
  ablate_cmd->add_option("--test-data", ab_test_data,
                         "separate test cycle file (instead of --test-ids)");
  ablate_cmd->add_option("--out", ab_out, "ablation table output path");
  add_config_flags(ablate_cmd, ab_flags);

  // predict
  auto* predict_cmd =
      app.add_subcommand("predict", "predict SoH for the last cycle of a file");
  std::string pr_ckpt, pr_file;
  predict_cmd->add_option("--ckpt", pr_ckpt, "checkpoint path")->required();
  predict_cmd->add_option("--cycle-file", pr_file, "cycle file")->required();

  // synth
  auto* synth_cmd =
      app.add_subcommand("synth", "write a synthetic degradation dataset");
  std::size_t sy_n = 50, sy_tmin = 24, sy_tmax = 64;
  std::uint64_t sy_seed = 7;
  std::string sy_out;
  synth_cmd->add_option("--n", sy_n, "number of cycles");
  synth_cmd->add_option("--seed", sy_seed, "generator seed");
  synth_cmd->add_option("--t-min", sy_tmin, "minimum cycle length");
  synth_cmd->add_option("--t-max", sy_tmax, "maximum cycle length");
  synth_cmd->add_option("--out", sy_out, "output csv path")->required();

  // gradcheck
  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "finite-difference check of the full model gradients");
  double gc_eps = 1e-6;
  ConfigFlags gc_flags;
  grad_cmd->add_option("--eps", gc_eps, "finite-difference step");
  add_config_flags(grad_cmd, gc_flags);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the error + usage hint
    return kExitConfig;
  }

  if (train_cmd->parsed()) {
    TrainConfig config = resolve_config(train_flags);
    print_run_header(config);
    CycleSet data = load_cycles(resolve_data_path(train_data));
    CycleSet selected = select_batteries(data, train_ids);
    TrainResult result = run_training_pipeline(selected, config, train_out);
    if (!train_log.empty()) result.log.save(train_log);
    std::cout << "trained " << config.epochs << " epochs on "
              << selected.cycles.size() << " cycles";
    if (std::isfinite(result.best_val_rmse)) {
      std::cout << ", best validation RMSE " << result.best_val_rmse;
    }
    std::cout << "\ncheckpoint written to " << train_out << "\n";
    return kExitOk;
  }

  if (eval_cmd->parsed()) {
    Checkpoint ckpt = load_checkpoint(eval_ckpt);
    print_run_header(ckpt.config);
    HistoryMode mode = eval_history.empty()
                           ? ckpt.config.eval_history
                           : history_mode_from_string(eval_history);
    CycleSet data = load_cycles(resolve_data_path(eval_data));
    CycleSet selected = select_batteries(data, eval_split);
    EvalReport report =
        evaluate(ckpt.params, ckpt.stats, selected, ckpt.config, mode);
    std::cout << report.summary() << "\n";
    // the companion mode is reported alongside; files carry the requested one
    HistoryMode other = mode == HistoryMode::ground_truth
                            ? HistoryMode::autoregressive
                            : HistoryMode::ground_truth;
    std::cout << evaluate(ckpt.params, ckpt.stats, selected, ckpt.config,
                          other)
                     .summary()
              << "\n";
    if (!eval_report.empty()) report.save(eval_report);
    if (!eval_plot.empty()) emit_plot_data(report, eval_plot);
    return kExitOk;
  }

  if (ablate_cmd->parsed()) {
    TrainConfig config = resolve_config(ab_flags);
    print_run_header(config);
    CycleSet data = load_cycles(resolve_data_path(ab_data));
    CycleSet train_set, test_set;
    if (!ab_test_data.empty()) {
      train_set = select_batteries(data, ab_train_ids);
      test_set = load_cycles(resolve_data_path(ab_test_data));
    } else {
      if (ab_train_ids.empty() || ab_test_ids.empty()) {
        throw ConfigError(
            "ablate needs --train-ids and --test-ids (or --test-data)");
      }
      auto [a, b] = split_by_battery(data, split_ids(ab_train_ids),
                                     split_ids(ab_test_ids));
      train_set = std::move(a);
      test_set = std::move(b);
    }
    AblationTable table = run_ablation(train_set, test_set, config);
    std::cout << table.summary();
    if (!ab_out.empty()) table.save(ab_out);
    return kExitOk;
  }

  if (predict_cmd->parsed()) {
    Checkpoint ckpt = load_checkpoint(pr_ckpt);
    std::cout << "# checkpoint config hash " << config_hash(ckpt.config)
              << ", seed " << ckpt.config.seed << "\n";
    CycleSet data = load_cycles(resolve_data_path(pr_file));
    const Cycle& target = data.cycles.back();
    auto cycles = data.battery_cycles(target.battery_id);
    std::vector<double> soh_seq;
    for (const Cycle* c : cycles) soh_seq.push_back(data.soh_of(*c));
    const std::size_t i = cycles.size() - 1;
    PaddedCycle padded = pad_and_mask(
        target, ckpt.stats, ckpt.config.model.pad_len,
        build_history(soh_seq, i, ckpt.config.model.history_window),
        soh_seq[i]);
    std::cout << predict_soh(ckpt.params, padded) << "\n";
    return kExitOk;
  }

  if (synth_cmd->parsed()) {
    std::cout << "# synth n=" << sy_n << " seed=" << sy_seed
              << " t_min=" << sy_tmin << " t_max=" << sy_tmax << "\n";
    CycleSet set = generate_synthetic(sy_n, sy_tmin, sy_tmax, sy_seed);
    save_cycles(set, sy_out);
    std::cout << "wrote " << set.cycles.size() << " cycles to " << sy_out
              << " (+ .meta)\n";
    return kExitOk;
  }

  if (grad_cmd->parsed()) {
    TrainConfig config = gradcheck_toy_config(1);
    if (!gc_flags.config_path.empty()) {
      config = load_config_file(gc_flags.config_path, config);
    }
    if (!gc_flags.set_pairs.empty()) {
      std::string text = gc_flags.set_pairs;
      for (char& c : text) {
        if (c == ',') c = '\n';
      }
      config = parse_config(text, config);
    }
    if (gc_flags.seed_given) config.seed = gc_flags.seed;
    config.validate();
    print_run_header(config);
    GradientCheckResult result = model_gradient_check(config, 3, gc_eps);
    std::cout << "checked " << result.n_parameters << " parameters ("
              << result.n_scalars << " scalars), max relative error "
              << result.max_rel_error << "\n";
    if (result.max_rel_error >= 1e-4) {
      std::cerr << "gradient check FAILED (threshold 1e-4)\n";
      return kExitNumeric;
    }
    return kExitOk;
  }

  return kExitConfig;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  try {
    return dispatch(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace tidsit
