#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tidsit/autodiff.hpp"
#include "tidsit/tensor.hpp"

namespace tidsit {

inline constexpr std::size_t kNumFeatures = 3;  // voltage, current, temperature
inline constexpr double kPadSentinel = -1.0;

/// One raw discharge cycle: a variable-length, irregularly sampled sequence
/// of (V, I, T) readings plus the measured discharge capacity.
struct Cycle {
  std::string battery_id;
  std::uint32_t cycle_index = 0;
  std::vector<double> timestamps;  // seconds since cycle start, increasing
  std::vector<std::array<double, kNumFeatures>> readings;
  double capacity_ah = 0.0;

  std::size_t length() const { return timestamps.size(); }
};

/// Ordered cycles grouped by battery plus each battery's rated capacity.
struct CycleSet {
  std::vector<Cycle> cycles;
  std::map<std::string, double> rated_capacity_ah;

  std::vector<std::string> battery_ids() const;
  std::vector<const Cycle*> battery_cycles(const std::string& id) const;
  double soh_of(const Cycle& c) const;
};

/// Per-feature min/max fitted on the training split only.
struct NormalizationStats {
  std::array<double, kNumFeatures> min{};
  std::array<double, kNumFeatures> max{};

  /// Min-max map into [0,1]; values outside the fitted range are clamped.
  double apply(std::size_t feature, double value) const;
  double invert(std::size_t feature, double normalized) const;
};

/// Fixed-length model-ready view of one cycle.
struct PaddedCycle {
  std::string battery_id;
  std::uint32_t cycle_index = 0;
  Tensor features;       // pad_len x d, valid rows in [0,1], padded rows -1
  Mask mask;             // leading T_i ones, then zeros
  Tensor tau_norm;       // 1 x pad_len, valid in [0,1], padded -1
  double soh = 0.0;      // label, in (0, 1.2]
  Tensor history;        // 1 x p, most recent first, 1.0 fill

  std::size_t valid_length() const;
};

// SoH(t) = C_current(t) / C_rated.
double compute_soh(double c_current_ah, double c_rated_ah);

/// Reads the canonical comma-delimited cycle file (header
/// battery_id,cycle_index,t_seconds,voltage_v,current_a,temperature_c with an
/// optional trailing capacity_ah column) plus the `<path>.meta` sidecar
/// carrying rated_capacity_ah.<battery> and, when the column is absent,
/// capacity_ah.<battery>.<cycle> entries. Cycle invariants are validated on
/// load and violations are reported with file/line context.
CycleSet load_cycles(const std::string& path);

/// Writes the single-file variant (capacity_ah column) plus sidecar; the
/// exact values round-trip through load_cycles.
void save_cycles(const CycleSet& set, const std::string& path);

NormalizationStats fit_normalization(const CycleSet& train);

PaddedCycle pad_and_mask(const Cycle& cycle, const NormalizationStats& stats,
                         std::size_t pad_len, const Tensor& history,
                         double soh);

/// [y^(i-1), ..., y^(i-p)], most recent first; positions before the first
/// cycle are filled with 1.0 (fresh cell).
Tensor build_history(const std::vector<double>& soh_sequence, std::size_t i,
                     std::size_t p);

std::pair<CycleSet, CycleSet> split_by_battery(
    const CycleSet& set, const std::vector<std::string>& train_ids,
    const std::vector<std::string>& test_ids);

/// Synthetic degradation battery for tests: SoH decays as
/// 1 - 0.3*(t/n)^1.2 with small seeded noise, cycle lengths shrink with
/// degradation, timestamps jitter, and the sensor channels are smooth
/// functions of SoH and normalized time. Battery id is SYN<seed>.
CycleSet generate_synthetic(std::size_t n_cycles, std::size_t t_min,
                            std::size_t t_max, std::uint64_t seed);

/// Ground-truth SoH labels per battery, in cycle order, plus the padded view
/// of every cycle (ground-truth history windows).
std::vector<PaddedCycle> build_padded_set(const CycleSet& set,
                                          const NormalizationStats& stats,
                                          std::size_t pad_len, std::size_t p);

}  // namespace tidsit
