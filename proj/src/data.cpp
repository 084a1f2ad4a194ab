#include "tidsit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <fstream>
#include <set>
#include <sstream>

#include "tidsit/errors.hpp"
#include "tidsit/io_util.hpp"
#include "tidsit/rng.hpp"

namespace tidsit {

namespace {

const char* kHeader6 =
    "battery_id,cycle_index,t_seconds,voltage_v,current_a,temperature_c";
const char* kHeader7 =
    "battery_id,cycle_index,t_seconds,voltage_v,current_a,temperature_c,"
    "capacity_ah";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": non-numeric field '" + s + "'");
  }
}

std::uint32_t parse_index(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size() || v < 0) throw std::invalid_argument(s);
    return static_cast<std::uint32_t>(v);
  } catch (const std::exception&) {
    throw DataError(where + ": invalid cycle index '" + s + "'");
  }
}

void validate_cycle(const Cycle& c, const std::string& where) {
  if (c.length() < 2) {
    throw DataError(where + ": cycle " + c.battery_id + "/" +
                    std::to_string(c.cycle_index) +
                    " has fewer than 2 readings");
  }
  if (c.readings.size() != c.timestamps.size()) {
    throw DataError(where + ": readings/timestamps length mismatch");
  }
  for (std::size_t j = 1; j < c.timestamps.size(); ++j) {
    if (!(c.timestamps[j] > c.timestamps[j - 1])) {
      throw DataError(where + ": non-increasing timestamp in cycle " +
                      c.battery_id + "/" + std::to_string(c.cycle_index));
    }
  }
  if (!(c.capacity_ah > 0.0)) {
    throw DataError(where + ": cycle " + c.battery_id + "/" +
                    std::to_string(c.cycle_index) +
                    " has non-positive capacity");
  }
}

std::map<std::string, std::string> read_sidecar(const std::string& path) {
  std::map<std::string, std::string> kv;
  std::ifstream in(path);
  if (!in) return kv;  // sidecar is optional for the single-file variant
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected key=value");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::string> CycleSet::battery_ids() const {
  std::vector<std::string> ids;
  for (const Cycle& c : cycles) {
    if (std::find(ids.begin(), ids.end(), c.battery_id) == ids.end()) {
      ids.push_back(c.battery_id);
    }
  }
  return ids;
}

std::vector<const Cycle*> CycleSet::battery_cycles(
    const std::string& id) const {
  std::vector<const Cycle*> out;
  for (const Cycle& c : cycles) {
    if (c.battery_id == id) out.push_back(&c);
  }
  return out;
}

double CycleSet::soh_of(const Cycle& c) const {
  auto it = rated_capacity_ah.find(c.battery_id);
  if (it == rated_capacity_ah.end()) {
    throw DataError("missing rated capacity for battery " + c.battery_id);
  }
  return compute_soh(c.capacity_ah, it->second);
}

double compute_soh(double c_current_ah, double c_rated_ah) {
  if (!(c_rated_ah > 0.0)) {
    throw DataError("rated capacity must be positive, got " +
                    std::to_string(c_rated_ah));
  }
  if (c_current_ah < 0.0) {
    throw DataError("measured capacity must be non-negative");
  }
  return c_current_ah / c_rated_ah;
}

CycleSet load_cycles(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open cycle file " + path);
  auto sidecar = read_sidecar(path + ".meta");

  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  bool has_capacity_col;
  if (line == kHeader7) {
    has_capacity_col = true;
  } else if (line == kHeader6) {
    has_capacity_col = false;
  } else {
    throw DataError(path + ":1: unrecognized header '" + line + "'");
  }
  const std::size_t n_cols = has_capacity_col ? 7 : 6;

  CycleSet set;
  Cycle cur;
  bool open = false;
  std::map<std::string, std::uint32_t> last_index;
  std::size_t lineno = 1;

  auto close_cycle = [&](const std::string& where) {
    if (!open) return;
    if (!has_capacity_col) {
      const std::string key = "capacity_ah." + cur.battery_id + "." +
                              std::to_string(cur.cycle_index);
      auto it = sidecar.find(key);
      if (it == sidecar.end()) {
        throw DataError(where + ": no capacity for cycle " + cur.battery_id +
                        "/" + std::to_string(cur.cycle_index) +
                        " (sidecar key " + key + " missing)");
      }
      cur.capacity_ah = parse_double(it->second, path + ".meta");
    }
    validate_cycle(cur, where);
    set.cycles.push_back(std::move(cur));
    cur = Cycle{};
    open = false;
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    auto fields = split_csv(line);
    if (fields.size() != n_cols) {
      throw DataError(where + ": expected " + std::to_string(n_cols) +
                      " columns, got " + std::to_string(fields.size()));
    }
    const std::string& bat = fields[0];
    const std::uint32_t idx = parse_index(fields[1], where);
    if (!open || bat != cur.battery_id || idx != cur.cycle_index) {
      close_cycle(where);
      auto li = last_index.find(bat);
      if (li != last_index.end() && idx <= li->second) {
        throw DataError(where + ": cycle index " + std::to_string(idx) +
                        " not increasing for battery " + bat);
      }
      last_index[bat] = idx;
      cur.battery_id = bat;
      cur.cycle_index = idx;
      open = true;
    }
    cur.timestamps.push_back(parse_double(fields[2], where));
    cur.readings.push_back({parse_double(fields[3], where),
                            parse_double(fields[4], where),
                            parse_double(fields[5], where)});
    if (has_capacity_col) {
      const double cap = parse_double(fields[6], where);
      if (cur.timestamps.size() == 1) {
        cur.capacity_ah = cap;
      } else if (cap != cur.capacity_ah) {
        throw DataError(where + ": capacity_ah changes within cycle " + bat +
                        "/" + std::to_string(idx));
      }
    }
  }
  close_cycle(path + ":" + std::to_string(lineno));
  if (set.cycles.empty()) throw DataError(path + ": no cycles found");

  for (const std::string& bat : set.battery_ids()) {
    const std::string key = "rated_capacity_ah." + bat;
    auto it = sidecar.find(key);
    if (it == sidecar.end()) {
      throw DataError(path + ".meta: missing " + key);
    }
    const double rated = parse_double(it->second, path + ".meta");
    if (!(rated > 0.0)) {
      throw DataError(path + ".meta: " + key + " must be positive");
    }
    set.rated_capacity_ah[bat] = rated;
  }
  return set;
}

void save_cycles(const CycleSet& set, const std::string& path) {
  std::ostringstream csv;
  csv << kHeader7 << "\n";
  for (const Cycle& c : set.cycles) {
    for (std::size_t j = 0; j < c.length(); ++j) {
      csv << c.battery_id << ',' << c.cycle_index << ','
          << fmt_double(c.timestamps[j]) << ','
          << fmt_double(c.readings[j][0]) << ','
          << fmt_double(c.readings[j][1]) << ','
          << fmt_double(c.readings[j][2]) << ','
          << fmt_double(c.capacity_ah) << "\n";
    }
  }
  atomic_write_file(path, csv.str());

  std::ostringstream meta;
  for (const auto& [bat, rated] : set.rated_capacity_ah) {
    meta << "rated_capacity_ah." << bat << '=' << fmt_double(rated) << "\n";
  }
  atomic_write_file(path + ".meta", meta.str());
}

double NormalizationStats::apply(std::size_t feature, double value) const {
  const double span = max[feature] - min[feature];
  const double v = (value - min[feature]) / span;
  return std::clamp(v, 0.0, 1.0);
}

double NormalizationStats::invert(std::size_t feature,
                                  double normalized) const {
  return min[feature] + normalized * (max[feature] - min[feature]);
}

NormalizationStats fit_normalization(const CycleSet& train) {
  if (train.cycles.empty()) {
    throw DataError("cannot fit normalization on an empty cycle set");
  }
  NormalizationStats stats;
  stats.min.fill(std::numeric_limits<double>::infinity());
  stats.max.fill(-std::numeric_limits<double>::infinity());
  for (const Cycle& c : train.cycles) {
    for (const auto& r : c.readings) {
      for (std::size_t f = 0; f < kNumFeatures; ++f) {
        stats.min[f] = std::min(stats.min[f], r[f]);
        stats.max[f] = std::max(stats.max[f], r[f]);
      }
    }
  }
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    if (!(stats.max[f] > stats.min[f])) {
      throw DataError("degenerate feature " + std::to_string(f) +
                      ": min equals max (" + std::to_string(stats.min[f]) +
                      ")");
    }
  }
  return stats;
}

std::size_t PaddedCycle::valid_length() const {
  std::size_t n = 0;
  for (std::uint8_t v : mask) n += v ? 1 : 0;
  return n;
}

PaddedCycle pad_and_mask(const Cycle& cycle, const NormalizationStats& stats,
                         std::size_t pad_len, const Tensor& history,
                         double soh) {
  const std::size_t t_i = cycle.length();
  if (t_i > pad_len) {
    throw DataError("cycle " + cycle.battery_id + "/" +
                    std::to_string(cycle.cycle_index) + " has length " +
                    std::to_string(t_i) + " > pad length " +
                    std::to_string(pad_len));
  }
  if (!(soh > 0.0) || soh > 1.2) {
    throw DataError("SoH label " + std::to_string(soh) +
                    " outside (0, 1.2] for cycle " + cycle.battery_id + "/" +
                    std::to_string(cycle.cycle_index));
  }
  PaddedCycle out;
  out.battery_id = cycle.battery_id;
  out.cycle_index = cycle.cycle_index;
  out.features = Tensor(pad_len, kNumFeatures, kPadSentinel);
  out.tau_norm = Tensor(1, pad_len, kPadSentinel);
  out.mask.assign(pad_len, 0);
  const double tau0 = cycle.timestamps.front();
  const double span = cycle.timestamps.back() - tau0;
  for (std::size_t j = 0; j < t_i; ++j) {
    out.mask[j] = 1;
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
      out.features(j, f) = stats.apply(f, cycle.readings[j][f]);
    }
    out.tau_norm(0, j) = (cycle.timestamps[j] - tau0) / span;
  }
  out.soh = soh;
  out.history = history;
  return out;
}

Tensor build_history(const std::vector<double>& soh_sequence, std::size_t i,
                     std::size_t p) {
  if (p < 1) throw ConfigError("history window must be at least 1");
  Tensor h(1, p, 1.0);
  for (std::size_t k = 0; k < p; ++k) {
    // position i-1-k, most recent first
    if (i >= k + 1 && i - 1 - k < soh_sequence.size()) {
      h(0, k) = soh_sequence[i - 1 - k];
    }
  }
  return h;
}

std::pair<CycleSet, CycleSet> split_by_battery(
    const CycleSet& set, const std::vector<std::string>& train_ids,
    const std::vector<std::string>& test_ids) {
  if (train_ids.empty() || test_ids.empty()) {
    throw ConfigError("split requires non-empty train and test id lists");
  }
  std::set<std::string> train(train_ids.begin(), train_ids.end());
  std::set<std::string> test(test_ids.begin(), test_ids.end());
  for (const std::string& id : train) {
    if (test.count(id)) {
      throw ConfigError("battery " + id + " appears in both splits");
    }
  }
  auto known = set.battery_ids();
  auto check_known = [&](const std::string& id) {
    if (std::find(known.begin(), known.end(), id) == known.end()) {
      throw ConfigError("unknown battery id " + id);
    }
  };
  for (const std::string& id : train) check_known(id);
  for (const std::string& id : test) check_known(id);

  CycleSet a, b;
  for (const Cycle& c : set.cycles) {
    if (train.count(c.battery_id)) {
      a.cycles.push_back(c);
    } else if (test.count(c.battery_id)) {
      b.cycles.push_back(c);
    }
  }
  for (const std::string& id : train) {
    a.rated_capacity_ah[id] = set.rated_capacity_ah.at(id);
  }
  for (const std::string& id : test) {
    b.rated_capacity_ah[id] = set.rated_capacity_ah.at(id);
  }
  return {std::move(a), std::move(b)};
}

CycleSet generate_synthetic(std::size_t n_cycles, std::size_t t_min,
                            std::size_t t_max, std::uint64_t seed) {
  if (t_min < 2 || t_min > t_max) {
    throw ConfigError("synthetic generator requires 2 <= t_min <= t_max");
  }
  const std::string battery = "SYN" + std::to_string(seed);
  const double rated = 2.0;
  CycleSet set;
  set.rated_capacity_ah[battery] = rated;

  for (std::size_t i = 0; i < n_cycles; ++i) {
    const double t = static_cast<double>(i + 1);
    const double n = static_cast<double>(n_cycles);
    const double decay = 1.0 - 0.3 * std::pow(t / n, 1.2);
    RngStream noise = RngStream::derive(seed, "synthetic/cycle", i);
    const double soh =
        std::clamp(decay + 0.001 * noise.next_normal(), 0.05, 1.2);

    // lengths shrink with degradation, with a little jitter
    const double frac = (soh - 0.7) / 0.3;
    const double len_f = static_cast<double>(t_min) +
                         (static_cast<double>(t_max - t_min)) *
                             std::clamp(frac, 0.0, 1.0);
    long len = std::lround(len_f + noise.next_uniform(-1.5, 1.5));
    len = std::clamp<long>(len, static_cast<long>(t_min),
                           static_cast<long>(t_max));

    Cycle c;
    c.battery_id = battery;
    c.cycle_index = static_cast<std::uint32_t>(i);
    c.capacity_ah = soh * rated;
    const double duration = 3600.0 * (0.5 + 0.5 * soh);
    const double base_step = duration / static_cast<double>(len);
    double tau = 0.0;
    for (long j = 0; j < len; ++j) {
      if (j > 0) tau += base_step * (0.6 + 0.8 * noise.next_uniform());
      const double r =
          static_cast<double>(j) / static_cast<double>(len - 1);
      const double v = 4.1 - 0.9 * r - 0.4 * (1.0 - soh) * (0.5 + r) +
                       0.005 * noise.next_normal();
      const double amp = -(1.8 + 0.3 * soh) + 0.1 * r +
                         0.005 * noise.next_normal();
      const double temp = 24.0 + 12.0 * r * (1.3 - soh) +
                          0.05 * noise.next_normal();
      c.timestamps.push_back(tau);
      c.readings.push_back({v, amp, temp});
    }
    set.cycles.push_back(std::move(c));
  }
  return set;
}

std::vector<PaddedCycle> build_padded_set(const CycleSet& set,
                                          const NormalizationStats& stats,
                                          std::size_t pad_len, std::size_t p) {
  std::vector<PaddedCycle> out;
  out.reserve(set.cycles.size());
  for (const std::string& bat : set.battery_ids()) {
    auto cycles = set.battery_cycles(bat);
    std::vector<double> soh_seq;
    soh_seq.reserve(cycles.size());
    for (const Cycle* c : cycles) soh_seq.push_back(set.soh_of(*c));
    for (std::size_t i = 0; i < cycles.size(); ++i) {
      out.push_back(pad_and_mask(*cycles[i], stats, pad_len,
                                 build_history(soh_seq, i, p), soh_seq[i]));
    }
  }
  return out;
}

}  // namespace tidsit
