#include "tidsit/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "tidsit/checkpoint.hpp"
#include "tidsit/errors.hpp"
#include "tidsit/evaluation.hpp"
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

double parse_num(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": invalid number '" + v + "'");
  }
}

std::size_t parse_size(const std::string& v, const std::string& key) {
  const double d = parse_num(v, key);
  if (d < 0 || d != std::floor(d)) {
    throw ConfigError("config key " + key + ": expected non-negative integer");
  }
  return static_cast<std::size_t>(d);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected true/false");
}

}  // namespace

std::string to_string(HistoryMode mode) {
  return mode == HistoryMode::ground_truth ? "ground_truth" : "autoregressive";
}

HistoryMode history_mode_from_string(const std::string& s) {
  if (s == "ground_truth") return HistoryMode::ground_truth;
  if (s == "autoregressive") return HistoryMode::autoregressive;
  throw ConfigError("unknown history mode '" + s +
                    "' (ground_truth|autoregressive)");
}

void TrainConfig::validate() const {
  model.validate();
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (epochs == 0) throw ConfigError("epoch count must be positive");
  if (learning_rate < 0.0) throw ConfigError("learning rate must be >= 0");
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw ConfigError("val fraction must be in [0, 1)");
  }
  if (grad_clip_norm < 0.0) throw ConfigError("grad clip norm must be >= 0");
}

std::string serialize_config(const TrainConfig& c) {
  std::ostringstream s;
  s << "pad_len=" << c.model.pad_len << "\n";
  s << "hidden=" << c.model.hidden << "\n";
  s << "n_features=" << c.model.n_features << "\n";
  s << "temporal_heads=" << c.model.temporal_heads << "\n";
  s << "temporal_head_dim=" << c.model.temporal_head_dim << "\n";
  s << "encoder_layers=" << c.model.encoder_layers << "\n";
  s << "encoder_heads=" << c.model.encoder_heads << "\n";
  s << "ffn_dim=" << c.model.ffn_dim << "\n";
  s << "history_window=" << c.model.history_window << "\n";
  s << "dropout=" << fmt(c.model.dropout) << "\n";
  s << "layer_norm_eps=" << fmt(c.model.layer_norm_eps) << "\n";
  s << "encoder=" << c.model.encoder_kind << "\n";
  s << "use_temporal_attention="
    << (c.switches.use_temporal_attention ? "true" : "false") << "\n";
  s << "use_time_embedding="
    << (c.switches.use_time_embedding ? "true" : "false") << "\n";
  s << "use_variate_embedding="
    << (c.switches.use_variate_embedding ? "true" : "false") << "\n";
  s << "use_history=" << (c.switches.use_history ? "true" : "false") << "\n";
  s << "batch_size=" << c.batch_size << "\n";
  s << "epochs=" << c.epochs << "\n";
  s << "learning_rate=" << fmt(c.learning_rate) << "\n";
  s << "adam_beta1=" << fmt(c.adam_beta1) << "\n";
  s << "adam_beta2=" << fmt(c.adam_beta2) << "\n";
  s << "adam_eps=" << fmt(c.adam_eps) << "\n";
  s << "grad_clip_norm=" << fmt(c.grad_clip_norm) << "\n";
  s << "val_fraction=" << fmt(c.val_fraction) << "\n";
  s << "seed=" << c.seed << "\n";
  s << "eval_history_mode=" << to_string(c.eval_history) << "\n";
  return s.str();
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key=value, got '" + line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "pad_len") base.model.pad_len = parse_size(value, key);
    else if (key == "hidden") base.model.hidden = parse_size(value, key);
    else if (key == "n_features") base.model.n_features = parse_size(value, key);
    else if (key == "temporal_heads") base.model.temporal_heads = parse_size(value, key);
    else if (key == "temporal_head_dim") base.model.temporal_head_dim = parse_size(value, key);
    else if (key == "encoder_layers") base.model.encoder_layers = parse_size(value, key);
    else if (key == "encoder_heads") base.model.encoder_heads = parse_size(value, key);
    else if (key == "ffn_dim") base.model.ffn_dim = parse_size(value, key);
    else if (key == "history_window") base.model.history_window = parse_size(value, key);
    else if (key == "dropout") base.model.dropout = parse_num(value, key);
    else if (key == "layer_norm_eps") base.model.layer_norm_eps = parse_num(value, key);
    else if (key == "encoder") base.model.encoder_kind = value;
    else if (key == "use_temporal_attention") base.switches.use_temporal_attention = parse_bool(value, key);
    else if (key == "use_time_embedding") base.switches.use_time_embedding = parse_bool(value, key);
    else if (key == "use_variate_embedding") base.switches.use_variate_embedding = parse_bool(value, key);
    else if (key == "use_history") base.switches.use_history = parse_bool(value, key);
    else if (key == "batch_size") base.batch_size = parse_size(value, key);
    else if (key == "epochs") base.epochs = parse_size(value, key);
    else if (key == "learning_rate") base.learning_rate = parse_num(value, key);
    else if (key == "adam_beta1") base.adam_beta1 = parse_num(value, key);
    else if (key == "adam_beta2") base.adam_beta2 = parse_num(value, key);
    else if (key == "adam_eps") base.adam_eps = parse_num(value, key);
    else if (key == "grad_clip_norm") base.grad_clip_norm = parse_num(value, key);
    else if (key == "val_fraction") base.val_fraction = parse_num(value, key);
    else if (key == "seed") base.seed = static_cast<std::uint64_t>(parse_size(value, key));
    else if (key == "eval_history_mode") base.eval_history = history_mode_from_string(value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return base;
}

TrainConfig load_config_file(const std::string& path, TrainConfig base) {
  return parse_config(read_file(path), std::move(base));
}

std::string config_hash(const TrainConfig& config) {
  const std::string text = serialize_config(config);
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

void TrainLog::save(const std::string& path) const {
  std::ostringstream s;
  s << "# seed=" << seed << " config_hash=" << config_hash << "\n";
  s << "epoch,train_loss,val_rmse,seconds\n";
  for (const TrainLogEntry& e : entries) {
    s << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.val_rmse) << ','
      << fmt(e.seconds) << "\n";
  }
  atomic_write_file(path, s.str());
}

Tape::NodeId mse_loss(Tape& tape, const std::vector<Tape::NodeId>& preds,
                      const std::vector<double>& targets) {
  if (preds.empty() || preds.size() != targets.size()) {
    throw NumericError("mse_loss requires equal-length non-empty batches");
  }
  Tape::NodeId acc = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    Tape::NodeId diff = tape.add_scalar(preds[i], -targets[i]);
    Tape::NodeId sq = tape.mul(diff, diff);
    acc = (i == 0) ? sq : tape.add(acc, sq);
  }
  return tape.scale(acc, 1.0 / static_cast<double>(preds.size()));
}

double mse(const std::vector<double>& preds,
           const std::vector<double>& targets) {
  if (preds.empty() || preds.size() != targets.size()) {
    throw NumericError("mse requires equal-length non-empty batches");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - targets[i];
    acc += d * d;
  }
  return acc / static_cast<double>(preds.size());
}

void optimizer_step(ModelParams& params, const ParamMap& grads,
                    AdamState& state, double lr, double beta1, double beta2,
                    double eps) {
  if (state.step == 0) {
    for (const auto& [path, t] : params.tensors) {
      state.m.emplace(path, Tensor(t.rows(), t.cols(), 0.0));
      state.v.emplace(path, Tensor(t.rows(), t.cols(), 0.0));
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (auto& [path, t] : params.tensors) {
    auto git = grads.find(path);
    if (git == grads.end()) {
      throw NumericError("optimizer_step: no gradient for " + path);
    }
    const Tensor& g = git->second;
    if (!g.same_shape(t)) {
      throw NumericError("optimizer_step: gradient shape mismatch at " + path);
    }
    Tensor& m = state.m.at(path);
    Tensor& v = state.v.at(path);
    for (std::size_t i = 0; i < t.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      t[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

std::pair<CycleSet, CycleSet> split_train_val(const CycleSet& set,
                                              double val_fraction) {
  CycleSet train, val;
  for (const std::string& bat : set.battery_ids()) {
    auto cycles = set.battery_cycles(bat);
    const std::size_t n_val = static_cast<std::size_t>(
        std::floor(static_cast<double>(cycles.size()) * val_fraction));
    const std::size_t n_train = cycles.size() - n_val;
    for (std::size_t i = 0; i < cycles.size(); ++i) {
      (i < n_train ? train : val).cycles.push_back(*cycles[i]);
    }
    train.rated_capacity_ah[bat] = set.rated_capacity_ah.at(bat);
    if (n_val > 0) val.rated_capacity_ah[bat] = set.rated_capacity_ah.at(bat);
  }
  return {std::move(train), std::move(val)};
}

TrainResult train(const CycleSet& train_set, const CycleSet& val_set,
                  const TrainConfig& config,
                  const std::string& checkpoint_path) {
  config.validate();
  if (train_set.cycles.empty()) {
    throw DataError("training requires a non-empty cycle set");
  }
  const NormalizationStats stats = fit_normalization(train_set);
  const std::vector<PaddedCycle> train_cycles = build_padded_set(
      train_set, stats, config.model.pad_len, config.model.history_window);
  const bool has_val = !val_set.cycles.empty();

  ModelParams params = init_params(config.model, config.switches, config.seed);
  AdamState adam;
  TrainLog log;
  log.seed = config.seed;
  log.config_hash = config_hash(config);

  ModelParams best_params = params;
  double best_val = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_cycles.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double t0 = now_seconds();
    RngStream shuffle_stream =
        RngStream::derive(config.seed, "shuffle", epoch);
    shuffle_stream.shuffle(order);

    double loss_sum = 0.0;
    std::size_t n_seen = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size, ++batch_index) {
      const std::size_t end =
          std::min(order.size(), start + config.batch_size);
      Tape tape;
      BoundParams bound = bind_params(tape, params);
      RngStream dropout_stream =
          RngStream::derive(config.seed, "dropout", epoch, batch_index);
      std::vector<Tape::NodeId> preds;
      std::vector<double> targets;
      for (std::size_t b = start; b < end; ++b) {
        const PaddedCycle& cycle = train_cycles[order[b]];
        preds.push_back(predict_soh_node(tape, bound, config.model,
                                         config.switches, cycle, Mode::train,
                                         dropout_stream));
        targets.push_back(cycle.soh);
      }
      Tape::NodeId loss = mse_loss(tape, preds, targets);
      const double loss_value = tape.value(loss).item();
      if (!std::isfinite(loss_value)) {
        throw NumericError(
            "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
            std::to_string(batch_index) +
            "; consider setting grad_clip_norm=1.0");
      }
      tape.backward(loss);
      ParamMap grads;
      for (const auto& [path, id] : bound.ids) {
        grads.emplace(path, tape.adjoint(id));
      }
      if (config.grad_clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [_, g] : grads) {
          for (double x : g.data()) sq += x * x;
        }
        const double norm = std::sqrt(sq);
        if (norm > config.grad_clip_norm) {
          const double s = config.grad_clip_norm / norm;
          for (auto& [_, g] : grads) {
            for (double& x : g.data()) x *= s;
          }
        }
      }
      optimizer_step(params, grads, adam, config.learning_rate,
                     config.adam_beta1, config.adam_beta2, config.adam_eps);
      loss_sum += loss_value * static_cast<double>(end - start);
      n_seen += end - start;
    }

    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(n_seen);
    entry.val_rmse = std::numeric_limits<double>::quiet_NaN();
    if (has_val) {
      EvalReport report =
          evaluate(params, stats, val_set, config, HistoryMode::ground_truth);
      entry.val_rmse = report.rmse;
      if (report.rmse < best_val) {
        best_val = report.rmse;
        best_params = params;
      }
    }
    entry.seconds = now_seconds() - t0;
    log.entries.push_back(entry);

    if (!checkpoint_path.empty()) {
      save_checkpoint(checkpoint_path, params, stats, config);
    }
  }

  TrainResult result;
  result.params = has_val ? best_params : params;
  result.stats = stats;
  result.log = std::move(log);
  result.best_val_rmse =
      has_val ? best_val : std::numeric_limits<double>::quiet_NaN();
  if (!checkpoint_path.empty()) {
    save_checkpoint(checkpoint_path, result.params, stats, config);
  }
  return result;
}

TrainResult run_training_pipeline(const CycleSet& train_set,
                                  const TrainConfig& config,
                                  const std::string& checkpoint_path) {
  auto [fit_set, val_set] = split_train_val(train_set, config.val_fraction);
  return train(fit_set, val_set, config, checkpoint_path);
}

TrainConfig gradcheck_toy_config(std::uint64_t seed) {
  TrainConfig config;
  config.model.pad_len = 16;
  config.model.hidden = 8;
  config.model.history_window = 4;
  config.model.encoder_heads = 2;
  config.model.ffn_dim = 32;
  config.model.dropout = 0.0;
  config.seed = seed;
  return config;
}

GradientCheckResult model_gradient_check(const TrainConfig& config,
                                         std::size_t n_cycles, double eps,
                                         double floor) {
  const CycleSet set = generate_synthetic(
      n_cycles, 4, std::min<std::size_t>(config.model.pad_len, 12),
      config.seed);
  const NormalizationStats stats = fit_normalization(set);
  const std::vector<PaddedCycle> cycles = build_padded_set(
      set, stats, config.model.pad_len, config.model.history_window);
  ModelParams params = init_params(config.model, config.switches, config.seed);

  auto loss_of = [&](const ParamMap& tensors) {
    ModelParams p;
    p.config = config.model;
    p.switches = config.switches;
    p.tensors = tensors;
    Tape tape;
    BoundParams bound = bind_params(tape, p);
    RngStream stream = RngStream::derive(config.seed, "gradcheck-dropout");
    std::vector<Tape::NodeId> preds;
    std::vector<double> targets;
    for (const PaddedCycle& c : cycles) {
      preds.push_back(predict_soh_node(tape, bound, p.config, p.switches, c,
                                       Mode::train, stream));
      targets.push_back(c.soh);
    }
    return tape.value(mse_loss(tape, preds, targets)).item();
  };

  // reverse-mode gradients
  ParamMap analytic;
  {
    Tape tape;
    BoundParams bound = bind_params(tape, params);
    RngStream stream = RngStream::derive(config.seed, "gradcheck-dropout");
    std::vector<Tape::NodeId> preds;
    std::vector<double> targets;
    for (const PaddedCycle& c : cycles) {
      preds.push_back(predict_soh_node(tape, bound, config.model,
                                       config.switches, c, Mode::train,
                                       stream));
      targets.push_back(c.soh);
    }
    tape.backward(mse_loss(tape, preds, targets));
    for (const auto& [path, id] : bound.ids) {
      analytic.emplace(path, tape.adjoint(id));
    }
  }

  ParamMap numeric = finite_difference_gradient(loss_of, params.tensors, eps);

  GradientCheckResult result;
  result.max_rel_error = max_relative_error(analytic, numeric, floor);
  result.n_parameters = params.tensors.size();
  result.n_scalars = params.count_scalars();
  return result;
}

}  // namespace tidsit
