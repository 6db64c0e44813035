#include "ftl/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ftl {
namespace {

constexpr char kMagic[8] = {'F', 'T', 'L', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void f64s(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = count(1);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> f64s() {
    const auto n = count(8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::size_t count(std::size_t elem_size) {
    const auto n = u64();
    if (n > (size_ - pos_) / elem_size) throw RuntimeFailure("corrupt checkpoint: length field out of range");
    return static_cast<std::size_t>(n);
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw RuntimeFailure("corrupt checkpoint: truncated payload");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(const std::uint8_t* data, std::size_t size) {
  return static_cast<std::uint32_t>(crc32(0L, data, static_cast<uInt>(size)));
}

void write_payload(Writer& w, const TrainState& s) {
  const auto& cfg = s.model.config();
  const auto& b = cfg.backbone;
  w.str(to_string(b.kind));
  w.i64(b.image_size);
  w.i64(b.in_channels);
  w.u64(b.conv_channels.size());
  for (int c : b.conv_channels) w.i64(c);
  w.i64(b.embedding_dim);
  w.u8(b.normalize_embedding ? 1 : 0);
  w.i64(cfg.discriminator_hidden);
  w.u64(cfg.categories.size());
  for (const auto& c : cfg.categories) w.str(c);

  const auto& params = s.model.parameters();
  w.u64(params.size());
  for (const auto& p : params) {
    w.str(p.name);
    w.u64(p.shape.size());
    for (int d : p.shape) w.i64(d);
    w.u8(p.is_bias ? 1 : 0);
    w.u8(p.trainable ? 1 : 0);
    w.u8(static_cast<std::uint8_t>(p.role));
    w.f64s(p.value);
  }

  w.f64(s.adam.beta1);
  w.f64(s.adam.beta2);
  w.f64(s.adam.epsilon);
  w.u64(s.adam.t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.f64s(s.adam.m[i]);
    w.f64s(s.adam.v[i]);
  }

  w.i64(s.epoch);
  w.u64(s.step);
  w.str(s.rng.state());
  w.str(s.train_dataset);
  w.str(s.variant);
  w.str(to_string(s.finetune_mode));
}

TrainState read_payload(Reader& r) {
  ModelConfig cfg;
  auto& b = cfg.backbone;
  b.kind = parse_backbone_kind(r.str());
  b.image_size = static_cast<int>(r.i64());
  b.in_channels = static_cast<int>(r.i64());
  b.conv_channels.resize(r.count(8));
  for (auto& c : b.conv_channels) c = static_cast<int>(r.i64());
  b.embedding_dim = static_cast<int>(r.i64());
  b.normalize_embedding = r.u8() != 0;
  cfg.discriminator_hidden = static_cast<int>(r.i64());
  cfg.categories.resize(r.count(8));
  for (auto& c : cfg.categories) c = r.str();

  std::vector<Parameter> params(r.count(8));
  for (auto& p : params) {
    p.name = r.str();
    p.shape.resize(r.count(8));
    for (auto& d : p.shape) d = static_cast<int>(r.i64());
    p.is_bias = r.u8() != 0;
    p.trainable = r.u8() != 0;
    const auto role = r.u8();
    if (role > static_cast<std::uint8_t>(ParamRole::discriminator)) throw RuntimeFailure("corrupt checkpoint: role");
    p.role = static_cast<ParamRole>(role);
    p.value = r.f64s();
  }

  AdamState adam;
  adam.beta1 = r.f64();
  adam.beta2 = r.f64();
  adam.epsilon = r.f64();
  adam.t = r.u64();
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam.m.push_back(r.f64s());
    adam.v.push_back(r.f64s());
    if (adam.m.back().size() != params[i].value.size() || adam.v.back().size() != params[i].value.size()) {
      throw RuntimeFailure("corrupt checkpoint: optimizer moments do not match " + params[i].name);
    }
  }

  const int epoch = static_cast<int>(r.i64());
  const std::uint64_t step = r.u64();
  Rng rng;
  rng.set_state(r.str());
  std::string dataset = r.str();
  std::string variant = r.str();
  const FinetuneMode mode = parse_finetune_mode(r.str());
  if (!r.done()) throw RuntimeFailure("corrupt checkpoint: trailing bytes");

  return TrainState{Model(std::move(cfg), std::move(params)), std::move(adam), epoch, step, std::move(rng),
                    std::move(dataset), std::move(variant), mode};
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state) {
  Writer payload;
  write_payload(payload, state);
  const auto& body = payload.bytes();

  Writer out;
  for (char c : kMagic) out.u8(static_cast<std::uint8_t>(c));
  out.u32(kCheckpointVersion);
  out.u64(body.size());
  auto& bytes = out.bytes();
  bytes.insert(bytes.end(), body.begin(), body.end());
  out.u32(checksum(body.data(), body.size()));
  return std::move(bytes);
}

TrainState decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t kHeader = sizeof(kMagic) + 4 + 8;
  if (bytes.size() < kHeader + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw RuntimeFailure("not a checkpoint file (bad magic)");
  }
  Reader header(bytes.data() + sizeof(kMagic), 12);
  const auto version = header.u32();
  if (version != kCheckpointVersion) {
    throw RuntimeFailure("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                         std::to_string(kCheckpointVersion) + ")");
  }
  const auto length = header.u64();
  if (length != bytes.size() - kHeader - 4) throw RuntimeFailure("corrupt checkpoint: length mismatch");
  const std::uint8_t* body = bytes.data() + kHeader;
  Reader trailer(body + length, 4);
  if (trailer.u32() != checksum(body, static_cast<std::size_t>(length))) {
    throw RuntimeFailure("corrupt checkpoint: checksum mismatch");
  }
  Reader r(body, static_cast<std::size_t>(length));
  try {
    return read_payload(r);
  } catch (const ValidationError& e) {
    throw RuntimeFailure(std::string("corrupt checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  const auto bytes = encode_checkpoint(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("checkpoint not found: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ftl
