// SPDX-License-Identifier: Apache-2.0
#include "fact/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <fstream>
#include <sstream>

#include "fact/error.hpp"

namespace fact {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { buf_.append(s); }
  void array(std::span<const double> values) {
    u64(values.size());
    for (double v : values) f64(v);
  }
  std::string& buffer() { return buf_; }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Vec array(std::uint64_t expected) {
    const std::uint64_t n = u64();
    if (n != expected) {
      throw Error(ErrorCode::ParseError, "array length " + std::to_string(n) + ", expected " + std::to_string(expected));
    }
    need(n * 8);
    Vec out(n);
    for (double& v : out) v = f64();
    return out;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > remaining()) throw Error(ErrorCode::ParseError, "checkpoint body ends early");
  }
  std::uint64_t get(int width) {
    need(static_cast<std::uint64_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + offset), static_cast<uInt>(chunk));
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_layers(Writer& w, const std::vector<DenseLayer>& layers) {
  for (const auto& layer : layers) {
    w.u32(static_cast<std::uint32_t>(layer.in_dim()));
    w.u32(static_cast<std::uint32_t>(layer.out_dim()));
    w.u32(layer.activation == Activation::tanh ? 1u : 0u);
    w.array(layer.weight.data);
    w.array(layer.bias);
  }
}

std::vector<DenseLayer> read_layers(Reader& r, std::uint32_t count) {
  std::vector<DenseLayer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t in = r.u32();
    const std::uint32_t out = r.u32();
    const std::uint32_t act = r.u32();
    if (act > 1) throw Error(ErrorCode::ParseError, "unknown activation code " + std::to_string(act));
    DenseLayer layer;
    layer.activation = act == 1 ? Activation::tanh : Activation::identity;
    layer.weight = Matrix(out, in);
    layer.weight.data = r.array(static_cast<std::uint64_t>(in) * out);
    layer.bias = r.array(out);
    layers.push_back(std::move(layer));
  }
  return layers;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& cp) {
  const SessionState& s = cp.state;
  Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(s.net.h_layers.size()));
  w.u32(static_cast<std::uint32_t>(s.net.g_layers.size()));
  write_layers(w, s.net.h_layers);
  write_layers(w, s.net.g_layers);

  w.f64(s.head.scale);
  w.u64(s.head.num_base);
  w.u64(s.head.dim());
  w.u64(s.head.num_known());
  w.u64(s.head.num_virtual());
  for (const auto& p : s.head.known) w.array(p);
  for (const auto& p : s.head.virtual_protos) w.array(p);

  w.u64(s.session_index);
  w.u64(s.registry.size());
  for (int label : s.registry) w.i64(label);
  w.u64(cp.config_echo.size());
  w.bytes(cp.config_echo);

  std::string& buf = w.buffer();
  const std::uint32_t crc = checksum(buf);
  Writer tail;
  tail.u32(crc);
  buf += tail.buffer();
  return buf;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  const std::size_t header = kCheckpointMagic.size() + 4;
  if (bytes.size() >= kCheckpointMagic.size() && bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw Error(ErrorCode::ParseError, "not a checkpoint (bad magic)");
  }
  if (bytes.size() >= header) {
    Reader peek(bytes.substr(kCheckpointMagic.size(), 4));
    const std::uint32_t version = peek.u32();
    if (version != kCheckpointVersion) {
      throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) +
                                                  ", this build reads version " + std::to_string(kCheckpointVersion));
    }
  }
  if (bytes.size() < header + 4) throw Error(ErrorCode::ChecksumMismatch, "checkpoint is truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  Reader tail(bytes.substr(bytes.size() - 4));
  if (tail.u32() != checksum(body)) throw Error(ErrorCode::ChecksumMismatch, "checkpoint checksum does not match");

  Reader r(body.substr(header));
  Checkpoint cp;
  SessionState& s = cp.state;
  const std::uint32_t num_h = r.u32();
  const std::uint32_t num_g = r.u32();
  s.net.h_layers = read_layers(r, num_h);
  s.net.g_layers = read_layers(r, num_g);
  s.net.validate();

  s.head.scale = r.f64();
  s.head.num_base = r.u64();
  const std::uint64_t dim = r.u64();
  const std::uint64_t num_known = r.u64();
  const std::uint64_t num_virtual = r.u64();
  for (std::uint64_t i = 0; i < num_known; ++i) s.head.known.push_back(r.array(dim));
  for (std::uint64_t i = 0; i < num_virtual; ++i) s.head.virtual_protos.push_back(r.array(dim));

  s.session_index = r.u64();
  const std::uint64_t registry = r.u64();
  if (registry != num_known) throw Error(ErrorCode::ParseError, "registry size differs from known prototype count");
  for (std::uint64_t i = 0; i < registry; ++i) s.registry.push_back(static_cast<int>(r.i64()));
  const std::uint64_t echo = r.u64();
  cp.config_echo = std::string(r.bytes(echo));
  if (r.remaining() != 0) throw Error(ErrorCode::ParseError, "trailing bytes after checkpoint body");
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
  const std::string bytes = encode_checkpoint(cp);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace fact
