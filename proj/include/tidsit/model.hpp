#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tidsit/autodiff.hpp"
#include "tidsit/data.hpp"
#include "tidsit/tensor.hpp"

namespace tidsit {

/// Architecture dimensions. Defaults reproduce the reference configuration:
/// hidden width 42, one encoder layer with 8 heads, feed-forward width 168,
/// dropout 0.1, pad length 371, history window 10.
struct ModelConfig {
  std::size_t pad_len = 371;
  std::size_t hidden = 42;
  std::size_t n_features = kNumFeatures;
  std::size_t temporal_heads = 1;
  std::size_t temporal_head_dim = 0;  // 0 -> n_features
  std::size_t encoder_layers = 1;
  std::size_t encoder_heads = 8;
  std::size_t ffn_dim = 168;
  std::size_t history_window = 10;
  double dropout = 0.1;
  double layer_norm_eps = 1e-5;
  std::string encoder_kind = "standard";

  std::size_t temporal_dk() const {
    return temporal_head_dim == 0 ? n_features : temporal_head_dim;
  }
  /// Hidden width 42 does not divide into 8 heads; per-head width rounds up
  /// and the output projection maps heads*dim back to the hidden width.
  std::size_t encoder_head_dim() const {
    return (hidden + encoder_heads - 1) / encoder_heads;
  }
  void validate() const;
};

struct AblationSwitches {
  bool use_temporal_attention = true;
  bool use_time_embedding = true;
  bool use_variate_embedding = true;
  bool use_history = true;

  bool full() const {
    return use_temporal_attention && use_time_embedding &&
           use_variate_embedding && use_history;
  }
};

/// All learnable weights, addressable by a stable string path. Which paths
/// exist follows the switches: disabling the variate embedding swaps the
/// per-variate projections for a per-timestep token projection.
struct ModelParams {
  ModelConfig config;
  AblationSwitches switches;
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& path);
  const Tensor& at(const std::string& path) const;
  std::vector<std::string> paths() const;
  std::size_t count_scalars() const;
};

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per matrix, zero
/// biases; deterministic per (seed, parameter path).
ModelParams init_params(const ModelConfig& config,
                        const AblationSwitches& switches, std::uint64_t seed);

/// Parameter tensors registered on a tape as differentiable leaves.
struct BoundParams {
  std::map<std::string, Tape::NodeId> ids;
  Tape::NodeId at(const std::string& path) const;
};

BoundParams bind_params(Tape& tape, const ModelParams& params);

struct TemporalAttentionNodes {
  Tape::NodeId output;        // T x d, after residual + layer norm
  Tape::NodeId pre_residual;  // T x d, multi-head output before residual
  std::vector<Tape::NodeId> head_weights;  // T x T attention weights per head
};

/// Masked scaled dot-product self-attention over time steps in raw feature
/// space, followed by dropout, residual and layer normalization. The mask is
/// key-side: padded keys get exactly zero weight for every query.
TemporalAttentionNodes temporal_attention(Tape& tape, Tape::NodeId x,
                                          const Mask& mask,
                                          const BoundParams& p,
                                          const ModelConfig& cfg, Mode mode,
                                          RngStream& dropout_stream);

/// Per-variate projection of the full length-T series into one width-H token
/// per sensor channel: rows of the transposed sequence times W^(v) plus
/// b^(v), stacked to d x H.
Tape::NodeId variate_embedding(Tape& tape, Tape::NodeId z,
                               const BoundParams& p, const ModelConfig& cfg);

/// Normalized timestamp row projected to 1 x H.
Tape::NodeId time_embedding(Tape& tape, Tape::NodeId tau_norm,
                            const BoundParams& p);

/// Broadcast-add of the time embedding onto every token row.
Tape::NodeId fuse(Tape& tape, Tape::NodeId z_var, Tape::NodeId e_time);

/// Past-SoH window projected to 1 x H.
Tape::NodeId history_embedding(Tape& tape, Tape::NodeId history,
                               const BoundParams& p);

/// Appends the history token as the final row.
Tape::NodeId assemble_input(Tape& tape, Tape::NodeId z_fused,
                            Tape::NodeId e_hist);

/// One post-norm encoder layer stack: multi-head self-attention and a
/// position-wise feed-forward network, each wrapped in dropout + residual +
/// layer norm. `key_mask` is null when every token is real.
Tape::NodeId encoder_forward(Tape& tape, Tape::NodeId tokens,
                             const Mask* key_mask, const BoundParams& p,
                             const ModelConfig& cfg, Mode mode,
                             RngStream& dropout_stream);

/// Full pipeline for one padded cycle, returning the scalar prediction node.
Tape::NodeId predict_soh_node(Tape& tape, const BoundParams& p,
                              const ModelConfig& cfg,
                              const AblationSwitches& switches,
                              const PaddedCycle& cycle, Mode mode,
                              RngStream& dropout_stream);

/// Convenience eval-mode forward.
double predict_soh(const ModelParams& params, const PaddedCycle& cycle,
                   const AblationSwitches& switches, Mode mode,
                   RngStream& dropout_stream);
double predict_soh(const ModelParams& params, const PaddedCycle& cycle);

}  // namespace tidsit
