#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "salient/io.hpp"
#include "salient/nanomodel.hpp"

namespace salient {

namespace {

constexpr char kMagic[4] = {'N', 'M', 'D', 'L'};
constexpr char kVersion = '1';
constexpr std::uint32_t kFfnMult = 4;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.append(c, n);
  }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  const std::string& str() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int k = 0; k < n; ++k) buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw TruncatedError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int k = 0; k < n; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto specs = parameter_layout(ckpt.config);
  if (ckpt.params.size() != parameter_count(ckpt.config)) throw ShapeError("parameter vector does not match config");
  Writer w;
  w.bytes(kMagic, 4);
  w.bytes(&kVersion, 1);
  const auto& c = ckpt.config;
  w.u32(static_cast<std::uint32_t>(c.n_layers));
  w.u32(static_cast<std::uint32_t>(c.n_heads));
  w.u32(static_cast<std::uint32_t>(c.d_model));
  w.u32(static_cast<std::uint32_t>(c.vocab_size));
  w.u32(static_cast<std::uint32_t>(c.max_seq_len));
  w.u32(kFfnMult);
  w.u32(c.precision == Precision::f32 ? 32u : 64u);
  w.u64(c.rng_seed);
  w.u32(static_cast<std::uint32_t>(specs.size()));
  for (const auto& spec : specs) {
    w.u16(static_cast<std::uint16_t>(spec.name.size()));
    w.bytes(spec.name.data(), spec.name.size());
    w.u32(static_cast<std::uint32_t>(spec.rows));
    w.u32(static_cast<std::uint32_t>(spec.cols));
    for (std::size_t k = 0; k < spec.size(); ++k) w.f64(ckpt.params[spec.offset + k]);
  }
  write_file_atomic(path, w.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(read_file(path));
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic): " + path.string());
  char version = 0;
  r.bytes(&version, 1);
  if (version != kVersion)
    throw VersionError(std::string("unsupported checkpoint version '") + version + "', expected '" + kVersion + "'");

  Checkpoint ckpt;
  auto& c = ckpt.config;
  c.n_layers = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.d_model = static_cast<int>(r.u32());
  c.vocab_size = static_cast<int>(r.u32());
  c.max_seq_len = static_cast<int>(r.u32());
  if (r.u32() != kFfnMult) throw ShapeError("unsupported feed-forward expansion in header");
  const std::uint32_t bits = r.u32();
  if (bits != 32 && bits != 64) throw FormatError("precision field must be 32 or 64");
  c.precision = bits == 32 ? Precision::f32 : Precision::f64;
  c.rng_seed = r.u64();
  c.validate();

  const auto specs = parameter_layout(c);
  const std::uint32_t count = r.u32();
  if (count != specs.size())
    throw ShapeError("tensor count " + std::to_string(count) + " does not match header (" +
                     std::to_string(specs.size()) + ")");
  ckpt.params.assign(parameter_count(c), 0.0);
  for (const auto& spec : specs) {
    std::string name(r.u16(), '\0');
    r.bytes(name.data(), name.size());
    const int rows = static_cast<int>(r.u32());
    const int cols = static_cast<int>(r.u32());
    if (name != spec.name) throw ShapeError("expected tensor " + spec.name + ", found " + name);
    if (rows != spec.rows || cols != spec.cols)
      throw ShapeError("tensor " + name + " is " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " but header implies " + std::to_string(spec.rows) + "x" + std::to_string(spec.cols));
    for (std::size_t k = 0; k < spec.size(); ++k) ckpt.params[spec.offset + k] = r.f64();
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last tensor");
  return ckpt;
}

}  // namespace salient
