#include "tidsit/model.hpp"

#include <cmath>

#include "tidsit/errors.hpp"
#include "tidsit/rng.hpp"

namespace tidsit {

namespace {

void expect_shape(const Tape& tape, Tape::NodeId id, std::size_t rows,
                  std::size_t cols, const char* stage) {
  const Tensor& v = tape.value(id);
  if (v.rows() != rows || v.cols() != cols) {
    throw ShapeError(std::string(stage) + ": expected " +
                     std::to_string(rows) + "x" + std::to_string(cols) +
                     ", got " + shape_string(v));
  }
}

Tensor uniform_init(std::size_t rows, std::size_t cols, std::uint64_t seed,
                    const std::string& path) {
  Tensor t(rows, cols);
  RngStream stream = RngStream::derive(seed, "init/" + path);
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  for (double& v : t.data()) v = stream.next_uniform(-bound, bound);
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  if (pad_len < 2) throw ConfigError("pad length must be at least 2");
  if (hidden == 0 || n_features == 0 || ffn_dim == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (temporal_heads == 0 || encoder_heads == 0 || encoder_layers == 0) {
    throw ConfigError("head and layer counts must be positive");
  }
  if (history_window == 0) throw ConfigError("history window must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must be in [0, 1)");
  }
  if (encoder_kind != "standard") {
    throw ConfigError("unknown encoder kind '" + encoder_kind +
                      "' (only 'standard' is implemented)");
  }
}

Tensor& ModelParams::at(const std::string& path) {
  auto it = tensors.find(path);
  if (it == tensors.end()) {
    throw ConfigError("model parameters have no entry '" + path + "'");
  }
  return it->second;
}

const Tensor& ModelParams::at(const std::string& path) const {
  auto it = tensors.find(path);
  if (it == tensors.end()) {
    throw ConfigError("model parameters have no entry '" + path + "'");
  }
  return it->second;
}

std::vector<std::string> ModelParams::paths() const {
  std::vector<std::string> out;
  out.reserve(tensors.size());
  for (const auto& [path, _] : tensors) out.push_back(path);
  return out;
}

std::size_t ModelParams::count_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.size();
  return n;
}

ModelParams init_params(const ModelConfig& config,
                        const AblationSwitches& switches,
                        std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  p.switches = switches;

  auto matrix = [&](const std::string& path, std::size_t r, std::size_t c) {
    p.tensors.emplace(path, uniform_init(r, c, seed, path));
  };
  auto zeros = [&](const std::string& path, std::size_t c) {
    p.tensors.emplace(path, Tensor(1, c, 0.0));
  };
  auto ones = [&](const std::string& path, std::size_t c) {
    p.tensors.emplace(path, Tensor(1, c, 1.0));
  };

  const std::size_t d = config.n_features;
  const std::size_t H = config.hidden;
  const std::size_t T = config.pad_len;

  if (switches.use_temporal_attention) {
    const std::size_t dk = config.temporal_dk();
    for (std::size_t h = 0; h < config.temporal_heads; ++h) {
      const std::string base = "temporal.head" + std::to_string(h);
      matrix(base + ".w_q", d, dk);
      matrix(base + ".w_k", d, dk);
      matrix(base + ".w_v", d, dk);
    }
    matrix("temporal.w_o", config.temporal_heads * dk, d);
    ones("temporal.ln.gamma", d);
    zeros("temporal.ln.beta", d);
  }
  if (switches.use_variate_embedding) {
    for (std::size_t v = 0; v < d; ++v) {
      const std::string base = "variate.v" + std::to_string(v);
      matrix(base + ".weight", T, H);
      zeros(base + ".bias", H);
    }
  } else {
    matrix("token.weight", d, H);
    zeros("token.bias", H);
  }
  if (switches.use_time_embedding) {
    matrix("time.weight", T, H);
    zeros("time.bias", H);
  }
  if (switches.use_history) {
    matrix("hist.weight", config.history_window, H);
    zeros("hist.bias", H);
  }
  const std::size_t enc_width = config.encoder_heads * config.encoder_head_dim();
  for (std::size_t l = 0; l < config.encoder_layers; ++l) {
    const std::string base = "encoder.l" + std::to_string(l);
    matrix(base + ".attn.w_q", H, enc_width);
    matrix(base + ".attn.w_k", H, enc_width);
    matrix(base + ".attn.w_v", H, enc_width);
    matrix(base + ".attn.w_o", enc_width, H);
    ones(base + ".ln1.gamma", H);
    zeros(base + ".ln1.beta", H);
    matrix(base + ".ffn.w1", H, config.ffn_dim);
    zeros(base + ".ffn.b1", config.ffn_dim);
    matrix(base + ".ffn.w2", config.ffn_dim, H);
    zeros(base + ".ffn.b2", H);
    ones(base + ".ln2.gamma", H);
    zeros(base + ".ln2.beta", H);
  }
  matrix("head.ffn.weight", H, H);
  zeros("head.ffn.bias", H);
  matrix("head.out.weight", H, 1);
  zeros("head.out.bias", 1);
  return p;
}

BoundParams bind_params(Tape& tape, const ModelParams& params) {
  BoundParams bound;
  for (const auto& [path, tensor] : params.tensors) {
    bound.ids.emplace(path, tape.parameter(tensor));
  }
  return bound;
}

Tape::NodeId BoundParams::at(const std::string& path) const {
  auto it = ids.find(path);
  if (it == ids.end()) {
    throw ConfigError("bound parameters have no entry '" + path + "'");
  }
  return it->second;
}

TemporalAttentionNodes temporal_attention(Tape& tape, Tape::NodeId x,
                                          const Mask& mask,
                                          const BoundParams& p,
                                          const ModelConfig& cfg, Mode mode,
                                          RngStream& dropout_stream) {
  const std::size_t T = tape.value(x).rows();
  const std::size_t d = tape.value(x).cols();
  if (mask.size() != T) {
    throw ShapeError("temporal_attention: mask length " +
                     std::to_string(mask.size()) + " vs sequence length " +
                     std::to_string(T));
  }
  const std::size_t dk = cfg.temporal_dk();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  TemporalAttentionNodes nodes;
  Tape::NodeId heads = 0;
  for (std::size_t h = 0; h < cfg.temporal_heads; ++h) {
    const std::string base = "temporal.head" + std::to_string(h);
    Tape::NodeId q = tape.matmul(x, p.at(base + ".w_q"));
    Tape::NodeId k = tape.matmul(x, p.at(base + ".w_k"));
    Tape::NodeId v = tape.matmul(x, p.at(base + ".w_v"));
    Tape::NodeId scores =
        tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_dk);
    Tape::NodeId weights = tape.softmax_masked(scores, mask);
    nodes.head_weights.push_back(weights);
    Tape::NodeId out = tape.matmul(weights, v);
    heads = (h == 0) ? out : tape.concat_cols(heads, out);
  }
  nodes.pre_residual = tape.matmul(heads, p.at("temporal.w_o"));
  expect_shape(tape, nodes.pre_residual, T, d, "temporal attention output");
  Tape::NodeId dropped =
      tape.dropout(nodes.pre_residual, cfg.dropout, mode, dropout_stream);
  nodes.output =
      tape.layer_norm(tape.add(x, dropped), p.at("temporal.ln.gamma"),
                      p.at("temporal.ln.beta"), cfg.layer_norm_eps);
  return nodes;
}

Tape::NodeId variate_embedding(Tape& tape, Tape::NodeId z,
                               const BoundParams& p, const ModelConfig& cfg) {
  const std::size_t d = tape.value(z).cols();
  Tape::NodeId stacked = 0;
  for (std::size_t v = 0; v < d; ++v) {
    const std::string base = "variate.v" + std::to_string(v);
    // column v of z is the full series of variate v
    Tape::NodeId series = tape.transpose(tape.slice_cols(z, v, 1));  // 1 x T
    Tape::NodeId token = tape.add(tape.matmul(series, p.at(base + ".weight")),
                                  p.at(base + ".bias"));
    stacked = (v == 0) ? token : tape.concat_rows(stacked, token);
  }
  expect_shape(tape, stacked, d, cfg.hidden, "variate embedding");
  return stacked;
}

Tape::NodeId time_embedding(Tape& tape, Tape::NodeId tau_norm,
                            const BoundParams& p) {
  return tape.add(tape.matmul(tau_norm, p.at("time.weight")),
                  p.at("time.bias"));
}

Tape::NodeId fuse(Tape& tape, Tape::NodeId z_var, Tape::NodeId e_time) {
  return tape.add_row(z_var, e_time);
}

Tape::NodeId history_embedding(Tape& tape, Tape::NodeId history,
                               const BoundParams& p) {
  return tape.add(tape.matmul(history, p.at("hist.weight")),
                  p.at("hist.bias"));
}

Tape::NodeId assemble_input(Tape& tape, Tape::NodeId z_fused,
                            Tape::NodeId e_hist) {
  return tape.concat_rows(z_fused, e_hist);
}

Tape::NodeId encoder_forward(Tape& tape, Tape::NodeId tokens,
                             const Mask* key_mask, const BoundParams& p,
                             const ModelConfig& cfg, Mode mode,
                             RngStream& dropout_stream) {
  const std::size_t n_tokens = tape.value(tokens).rows();
  const std::size_t H = cfg.hidden;
  expect_shape(tape, tokens, n_tokens, H, "encoder input");
  const Mask all_valid(n_tokens, 1);
  const Mask& mask = key_mask ? *key_mask : all_valid;
  if (mask.size() != n_tokens) {
    throw ShapeError("encoder mask length " + std::to_string(mask.size()) +
                     " vs token count " + std::to_string(n_tokens));
  }
  const std::size_t dk = cfg.encoder_head_dim();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  Tape::NodeId x = tokens;
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    const std::string base = "encoder.l" + std::to_string(l);
    Tape::NodeId q = tape.matmul(x, p.at(base + ".attn.w_q"));
    Tape::NodeId k = tape.matmul(x, p.at(base + ".attn.w_k"));
    Tape::NodeId v = tape.matmul(x, p.at(base + ".attn.w_v"));
    Tape::NodeId heads = 0;
    for (std::size_t h = 0; h < cfg.encoder_heads; ++h) {
      Tape::NodeId qh = tape.slice_cols(q, h * dk, dk);
      Tape::NodeId kh = tape.slice_cols(k, h * dk, dk);
      Tape::NodeId vh = tape.slice_cols(v, h * dk, dk);
      Tape::NodeId scores =
          tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dk);
      Tape::NodeId weights = tape.softmax_masked(scores, mask);
      Tape::NodeId out = tape.matmul(weights, vh);
      heads = (h == 0) ? out : tape.concat_cols(heads, out);
    }
    Tape::NodeId attn = tape.matmul(heads, p.at(base + ".attn.w_o"));
    Tape::NodeId dropped_attn =
        tape.dropout(attn, cfg.dropout, mode, dropout_stream);
    Tape::NodeId x1 = tape.layer_norm(
        tape.add(x, dropped_attn), p.at(base + ".ln1.gamma"),
        p.at(base + ".ln1.beta"), cfg.layer_norm_eps);

    Tape::NodeId hidden = tape.relu(tape.add_row(
        tape.matmul(x1, p.at(base + ".ffn.w1")), p.at(base + ".ffn.b1")));
    Tape::NodeId ffn = tape.add_row(
        tape.matmul(hidden, p.at(base + ".ffn.w2")), p.at(base + ".ffn.b2"));
    Tape::NodeId dropped_ffn =
        tape.dropout(ffn, cfg.dropout, mode, dropout_stream);
    x = tape.layer_norm(tape.add(x1, dropped_ffn), p.at(base + ".ln2.gamma"),
                        p.at(base + ".ln2.beta"), cfg.layer_norm_eps);
  }
  expect_shape(tape, x, n_tokens, H, "encoder output");
  return x;
}

Tape::NodeId predict_soh_node(Tape& tape, const BoundParams& p,
                              const ModelConfig& cfg,
                              const AblationSwitches& switches,
                              const PaddedCycle& cycle, Mode mode,
                              RngStream& dropout_stream) {
  const std::size_t T = cfg.pad_len;
  const std::size_t d = cfg.n_features;
  const std::size_t H = cfg.hidden;
  if (cycle.features.rows() != T || cycle.features.cols() != d) {
    throw ShapeError("padded cycle features are " +
                     shape_string(cycle.features) + ", config expects " +
                     std::to_string(T) + "x" + std::to_string(d));
  }
  if (cycle.mask.size() != T || cycle.tau_norm.cols() != T) {
    throw ShapeError("padded cycle mask/timestamps do not match pad length");
  }
  if (cycle.history.cols() != cfg.history_window) {
    throw ShapeError("history window is " +
                     std::to_string(cycle.history.cols()) +
                     ", config expects " +
                     std::to_string(cfg.history_window));
  }

  Tape::NodeId x = tape.input(cycle.features);
  Tape::NodeId z = x;
  if (switches.use_temporal_attention) {
    z = temporal_attention(tape, x, cycle.mask, p, cfg, mode, dropout_stream)
            .output;
    expect_shape(tape, z, T, d, "temporal attention stage");
  }

  Tape::NodeId tokens;
  Mask token_mask;
  if (switches.use_variate_embedding) {
    tokens = variate_embedding(tape, z, p, cfg);  // d x H, all tokens real
  } else {
    // per-timestep tokens; padded steps stay masked inside the encoder
    tokens = tape.add_row(tape.matmul(z, p.at("token.weight")),
                          p.at("token.bias"));
    expect_shape(tape, tokens, T, H, "per-timestep token stage");
    token_mask = cycle.mask;
  }

  if (switches.use_time_embedding) {
    Tape::NodeId e_time = time_embedding(tape, tape.input(cycle.tau_norm), p);
    expect_shape(tape, e_time, 1, H, "time embedding");
    tokens = fuse(tape, tokens, e_time);
  }

  if (switches.use_history) {
    Tape::NodeId e_hist = history_embedding(tape, tape.input(cycle.history), p);
    expect_shape(tape, e_hist, 1, H, "history embedding");
    tokens = assemble_input(tape, tokens, e_hist);
    if (!token_mask.empty()) token_mask.push_back(1);
  }
  const std::size_t n_tokens =
      (switches.use_variate_embedding ? d : T) + (switches.use_history ? 1 : 0);
  expect_shape(tape, tokens, n_tokens, H, "encoder input stage");

  Tape::NodeId encoded =
      encoder_forward(tape, tokens, token_mask.empty() ? nullptr : &token_mask,
                      p, cfg, mode, dropout_stream);

  Tape::NodeId pooled = token_mask.empty()
                            ? tape.mean_rows(encoded)
                            : tape.mean_rows(encoded, token_mask);
  expect_shape(tape, pooled, 1, H, "pooled representation");

  Tape::NodeId hidden = tape.relu(tape.add(
      tape.matmul(pooled, p.at("head.ffn.weight")), p.at("head.ffn.bias")));
  Tape::NodeId out = tape.add(tape.matmul(hidden, p.at("head.out.weight")),
                              p.at("head.out.bias"));
  expect_shape(tape, out, 1, 1, "prediction");
  return out;
}

double predict_soh(const ModelParams& params, const PaddedCycle& cycle,
                   const AblationSwitches& switches, Mode mode,
                   RngStream& dropout_stream) {
  Tape tape;
  BoundParams bound = bind_params(tape, params);
  Tape::NodeId y = predict_soh_node(tape, bound, params.config, switches,
                                    cycle, mode, dropout_stream);
  const double value = tape.value(y).item();
  if (!std::isfinite(value)) {
    throw NumericError("non-finite prediction for cycle " + cycle.battery_id +
                       "/" + std::to_string(cycle.cycle_index));
  }
  return value;
}

double predict_soh(const ModelParams& params, const PaddedCycle& cycle) {
  RngStream unused;
  return predict_soh(params, cycle, params.switches, Mode::eval, unused);
}

}  // namespace tidsit
