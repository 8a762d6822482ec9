#include "ngmf/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "ngmf/error.h"

namespace ngmf {
namespace {

constexpr char kMagic[] = "ngmf-ckpt v1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_tensors(std::ostream& out, ModelParams params) {
  const auto named = params.named();
  put_u64(out, named.size());
  for (const auto& p : named) {
    put_string(out, p.name);
    put_u64(out, p.value->rows());
    put_u64(out, p.value->cols());
    for (const double x : p.value->data()) put_u64(out, std::bit_cast<std::uint64_t>(x));
  }
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  void bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated");
    offset_ += n;
  }
  std::uint64_t u64() {
    unsigned char buf[8];
    bytes(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
  }
  std::string str(std::size_t limit = 1 << 20) {
    const std::uint64_t n = u64();
    if (n > limit) fail("string length " + std::to_string(n) + " too large");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(source_ + ": checkpoint " + what + " at byte " + std::to_string(offset_));
  }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t offset_ = 0;
};

ModelParams read_tensors(Reader& r, const ModelConfig& config) {
  ModelParams params = ModelParams::zeros(config);
  auto named = params.named();
  if (r.u64() != named.size()) r.fail("tensor count does not match config");
  for (auto& p : named) {
    const std::string name = r.str();
    if (name != p.name) r.fail("expected tensor " + p.name + ", found " + name);
    const auto rows = r.u64();
    const auto cols = r.u64();
    if (rows != p.value->rows() || cols != p.value->cols()) r.fail("tensor " + name + " has wrong shape");
    for (double& x : p.value->data()) x = std::bit_cast<double>(r.u64());
  }
  return params;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  static_assert(sizeof(double) == 8);
  out.write(kMagic, kMagicLen);
  put_string(out, ckpt.config.serialize());
  put_u64(out, static_cast<std::uint64_t>(ckpt.step));
  put_u64(out, ckpt.metadata.size());
  for (const auto& [k, v] : ckpt.metadata) {
    put_string(out, k);
    put_string(out, v);
  }
  put_tensors(out, ckpt.params);
  const bool moments = ckpt.adam_m.has_value() && ckpt.adam_v.has_value();
  put_u64(out, moments ? 1 : 0);
  if (moments) {
    put_tensors(out, *ckpt.adam_m);
    put_tensors(out, *ckpt.adam_v);
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write checkpoint " + path);
  write_checkpoint(out, ckpt);
  if (!out) throw ParseError("failed writing checkpoint " + path);
}

Checkpoint read_checkpoint(std::istream& in, const std::string& source_name) {
  Reader r(in, source_name);
  char magic[kMagicLen];
  r.bytes(magic, kMagicLen);
  if (std::memcmp(magic, kMagic, kMagicLen) != 0) r.fail("magic mismatch");
  Checkpoint ckpt;
  ckpt.config = ModelConfig::parse(r.str());
  try {
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("config invalid: ") + e.what());
  }
  ckpt.step = static_cast<std::int64_t>(r.u64());
  const auto meta = r.u64();
  for (std::uint64_t i = 0; i < meta; ++i) {
    std::string k = r.str();
    ckpt.metadata[k] = r.str();
  }
  ckpt.params = read_tensors(r, ckpt.config);
  if (r.u64() == 1) {
    ckpt.adam_m = read_tensors(r, ckpt.config);
    ckpt.adam_v = read_tensors(r, ckpt.config);
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path);
  return read_checkpoint(in, path);
}

}  // namespace ngmf
