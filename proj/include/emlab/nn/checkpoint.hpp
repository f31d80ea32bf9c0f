#pragma once

// Versioned binary checkpoint format.
//
//   "EMSC" | u32 version
//   config block: u32 field count, then (u32 name length, name, i64 value);
//                 the size name is stored as a string field "name"
//   u64 training step
//   u32 tensor count, then per tensor:
//     u32 name length, name, u32 rank, rank x u32 dims, raw LE float32 data
//   optimizer: u64 optimizer step, u32 tensor count, tensors as above with
//     names prefixed "adam_m/" and "adam_v/"
//   u32 CRC-32 (zlib) over every byte after the magic and before the CRC
//
// Everything is little-endian. Optimizer moments may be absent (count 0).

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emlab/nn/model.hpp"

namespace emlab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'E', 'M', 'S', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerState {
  Eigen::VectorXf m;
  Eigen::VectorXf v;
  std::int64_t step = 0;

  [[nodiscard]] bool empty() const { return m.size() == 0; }
  static OptimizerState zeros(std::int64_t p) {
    OptimizerState s;
    s.m = Eigen::VectorXf::Zero(p);
    s.v = Eigen::VectorXf::Zero(p);
    return s;
  }
};

struct CheckpointRecord {
  ModelState<float> model;
  std::int64_t step = 0;
  OptimizerState optimizer;
};

namespace detail {

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
  }
  void floats(const float* data, std::size_t n) {
    const auto* p = reinterpret_cast<const char*>(data);
    buf.insert(buf.end(), p, p + n * sizeof(float));
  }
  std::vector<char> buf;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  void floats(float* out, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(out, data_ + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  [[nodiscard]] bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_) throw CheckpointError("truncated checkpoint");
  }
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < n) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n - off, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data + off), chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline void write_tensor(Writer& w, const std::string& name, const TensorInfo& t, const float* base) {
  w.str(name);
  w.pod(static_cast<std::uint32_t>(t.rank));
  if (t.rank == 2) w.pod(static_cast<std::uint32_t>(t.rows));
  w.pod(static_cast<std::uint32_t>(t.cols));
  w.floats(base + t.offset, static_cast<std::size_t>(t.size()));
}

// Reads tensors into `out` according to the layout; names must match `prefix + layout name`.
inline void read_tensors(Reader& r, const ParamLayout& layout, const std::string& prefix, float* out,
                         std::uint32_t count) {
  if (count != layout.tensors.size())
    throw CheckpointError("shape mismatch: checkpoint has " + std::to_string(count) + " tensors, config expects " +
                          std::to_string(layout.tensors.size()));
  for (const auto& t : layout.tensors) {
    const auto name = r.str();
    if (name != prefix + t.name) throw CheckpointError("shape mismatch: expected tensor " + prefix + t.name + ", found " + name);
    const auto rank = r.pod<std::uint32_t>();
    if (static_cast<int>(rank) != t.rank) throw CheckpointError("shape mismatch: rank of " + name);
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.pod<std::uint32_t>();
    const bool ok = t.rank == 2 ? (static_cast<int>(dims[0]) == t.rows && static_cast<int>(dims[1]) == t.cols)
                                : static_cast<int>(dims[0]) == t.cols;
    if (!ok) throw CheckpointError("shape mismatch: dims of " + name);
    r.floats(out + t.offset, static_cast<std::size_t>(t.size()));
  }
}

inline std::vector<std::pair<std::string, std::int64_t>> config_fields(const ModelConfig& c) {
  return {{"layers", c.layers}, {"d_model", c.d_model}, {"heads", c.heads},
          {"d_ff", c.d_ff},     {"vocab", c.vocab},     {"max_seq_len", c.max_seq_len}};
}

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const ModelState<float>& model, std::int64_t step,
                                              const OptimizerState& opt = {}) {
  detail::Writer w;
  w.buf.insert(w.buf.end(), kCheckpointMagic, kCheckpointMagic + 4);
  w.pod(kCheckpointVersion);
  const auto fields = detail::config_fields(model.config());
  w.pod(static_cast<std::uint32_t>(fields.size() + 1));
  w.str("name");
  w.str(model.config().name);
  for (const auto& [k, v] : fields) {
    w.str(k);
    w.pod(v);
  }
  w.pod(static_cast<std::uint64_t>(step));
  const auto& layout = model.layout();
  w.pod(static_cast<std::uint32_t>(layout.tensors.size()));
  for (const auto& t : layout.tensors) detail::write_tensor(w, t.name, t, model.flat().data());
  w.pod(static_cast<std::uint64_t>(opt.step));
  if (opt.empty()) {
    w.pod(std::uint32_t{0});
  } else {
    if (opt.m.size() != layout.total || opt.v.size() != layout.total)
      throw CheckpointError("optimizer moments do not match parameter count");
    w.pod(static_cast<std::uint32_t>(2 * layout.tensors.size()));
    for (const auto& t : layout.tensors) detail::write_tensor(w, "adam_m/" + t.name, t, opt.m.data());
    for (const auto& t : layout.tensors) detail::write_tensor(w, "adam_v/" + t.name, t, opt.v.data());
  }
  const auto crc = detail::crc32_of(w.buf.data() + 4, w.buf.size() - 4);
  w.pod(crc);
  return std::move(w.buf);
}

/// Parses a checkpoint. When `expected` is given, the stored config must match it.
inline CheckpointRecord deserialize_checkpoint(const std::vector<char>& bytes,
                                               const std::optional<ModelConfig>& expected = std::nullopt) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError("not a checkpoint: bad magic");
  detail::Reader head(bytes.data() + 4, bytes.size() - 4);
  const auto version = head.pod<std::uint32_t>();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  if (bytes.size() < 12) throw CheckpointError("truncated checkpoint");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);

  detail::Reader r(bytes.data() + 8, bytes.size() - 12);
  ModelConfig cfg;
  const auto nfields = r.pod<std::uint32_t>();
  std::map<std::string, std::int64_t> values;
  for (std::uint32_t i = 0; i < nfields; ++i) {
    const auto key = r.str();
    if (key == "name") cfg.name = r.str();
    else values[key] = r.pod<std::int64_t>();
  }
  auto field = [&](const char* k) -> int {
    auto it = values.find(k);
    if (it == values.end()) throw CheckpointError(std::string("checkpoint config lacks field ") + k);
    return static_cast<int>(it->second);
  };
  cfg.layers = field("layers");
  cfg.d_model = field("d_model");
  cfg.heads = field("heads");
  cfg.d_ff = field("d_ff");
  cfg.vocab = field("vocab");
  cfg.max_seq_len = field("max_seq_len");
  if (expected) {
    const auto& e = *expected;
    if (e.layers != cfg.layers || e.d_model != cfg.d_model || e.heads != cfg.heads || e.d_ff != cfg.d_ff ||
        e.vocab != cfg.vocab || e.max_seq_len != cfg.max_seq_len)
      throw CheckpointError("shape mismatch: checkpoint config " + cfg.name + " does not match " + e.name);
  }
  try {
    cfg.validate();
  } catch (const ModelError& e) {
    throw CheckpointError(std::string("invalid config in checkpoint: ") + e.what());
  }

  CheckpointRecord rec{ModelState<float>(cfg), 0, {}};
  rec.step = static_cast<std::int64_t>(r.pod<std::uint64_t>());
  const auto& layout = rec.model.layout();
  detail::read_tensors(r, layout, "", rec.model.flat().data(), r.pod<std::uint32_t>());
  rec.optimizer.step = static_cast<std::int64_t>(r.pod<std::uint64_t>());
  const auto nopt = r.pod<std::uint32_t>();
  if (nopt != 0) {
    if (nopt != 2 * layout.tensors.size()) throw CheckpointError("shape mismatch: optimizer tensor count");
    rec.optimizer.m.resize(layout.total);
    rec.optimizer.v.resize(layout.total);
    detail::read_tensors(r, layout, "adam_m/", rec.optimizer.m.data(), static_cast<std::uint32_t>(layout.tensors.size()));
    detail::read_tensors(r, layout, "adam_v/", rec.optimizer.v.data(), static_cast<std::uint32_t>(layout.tensors.size()));
  }
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
  if (detail::crc32_of(bytes.data() + 4, bytes.size() - 8) != stored_crc) throw CheckpointError("checkpoint CRC mismatch");
  return rec;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelState<float>& model, std::int64_t step,
                            const OptimizerState& opt = {}) {
  const auto bytes = serialize_checkpoint(model, step, opt);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline CheckpointRecord load_checkpoint(const std::filesystem::path& path,
                                        const std::optional<ModelConfig>& expected = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, expected);
}

inline std::string checkpoint_filename(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%08lld.ckpt", static_cast<long long>(step));
  return buf;
}

}  // namespace emlab
