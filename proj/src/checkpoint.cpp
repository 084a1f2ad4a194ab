#include "tidsit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include "tidsit/errors.hpp"
#include "tidsit/io_util.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

namespace tidsit {

namespace {

constexpr char kMagic[8] = {'T', 'I', 'D', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw IoError("truncated checkpoint " + path_);
    }
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw IoError("truncated checkpoint " + path_);
    }
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const NormalizationStats& stats,
                     const TrainConfig& config) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);

  const std::string config_text = serialize_config(config);
  put<std::uint64_t>(out, config_text.size());
  out += config_text;

  put<std::uint32_t>(out, static_cast<std::uint32_t>(kNumFeatures));
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    put<double>(out, stats.min[f]);
    put<double>(out, stats.max[f]);
  }

  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& [p, tensor] : params.tensors) {  // map order: sorted
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.size()));
    out += p;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.cols()));
    for (double v : tensor.data()) put<double>(out, v);
  }
  atomic_write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r(bytes, path);
  if (r.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw IoError(path + " is not a tidsit checkpoint");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw IoError(path + ": unsupported checkpoint version " +
                  std::to_string(version));
  }

  Checkpoint ckpt;
  const auto config_len = r.get<std::uint64_t>();
  ckpt.config = parse_config(r.get_string(config_len));

  const auto n_features = r.get<std::uint32_t>();
  if (n_features != kNumFeatures) {
    throw IoError(path + ": unexpected feature count " +
                  std::to_string(n_features));
  }
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    ckpt.stats.min[f] = r.get<double>();
    ckpt.stats.max[f] = r.get<double>();
  }

  ckpt.params.config = ckpt.config.model;
  ckpt.params.switches = ckpt.config.switches;
  const auto n_params = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const auto path_len = r.get<std::uint32_t>();
    std::string name = r.get_string(path_len);
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    Tensor t(rows, cols);
    for (double& v : t.data()) v = r.get<double>();
    ckpt.params.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.at_end()) {
    throw IoError(path + ": trailing bytes after checkpoint payload");
  }

  // structural check against the config's expected parameter set
  const ModelParams expected = init_params(ckpt.config.model,
                                           ckpt.config.switches, 0);
  if (expected.tensors.size() != ckpt.params.tensors.size()) {
    throw IoError(path + ": parameter set does not match stored config");
  }
  for (const auto& [name, t] : expected.tensors) {
    auto it = ckpt.params.tensors.find(name);
    if (it == ckpt.params.tensors.end() || !it->second.same_shape(t)) {
      throw IoError(path + ": parameter " + name +
                    " missing or of unexpected shape");
    }
  }
  return ckpt;
}

}  // namespace tidsit
