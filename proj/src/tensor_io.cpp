#include "distnav/tensor_io.hpp"

#include "distnav/errors.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace distnav {
namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void f32(float v) { raw(&v, 4); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf.insert(buf.end(), c, c + n);
  }
  std::vector<char> buf;
};

class Reader {
 public:
  Reader(const std::vector<char>& b, std::size_t end) : buf_(b), end_(end) {}
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  float f32() {
    float v;
    raw(&v, 4);
    return v;
  }
  std::string bytes() {
    std::uint32_t n = u32();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > end_) throw DataError("tensor file truncated at byte " + std::to_string(pos_));
  }
  const std::vector<char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  Writer w;
  w.raw(file.magic.data(), 4);
  w.u32(file.version);
  w.bytes(file.metadata);
  w.u32(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    w.bytes(t.name);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(t.value.rows()));
    w.u32(static_cast<std::uint32_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) w.f32(static_cast<float>(t.value(r, c)));
  }
  w.u32(checksum(w.buf.data(), w.buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path, std::array<char, 4> expected_magic,
                            std::uint32_t expected_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 16) throw DataError("checkpoint too short: " + path.string());

  std::size_t body = buf.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + body, 4);

  TensorFile file;
  Reader r(buf, body);
  r.raw(file.magic.data(), 4);
  if (file.magic != expected_magic)
    throw DataError("bad magic in " + path.string() + ": expected '" +
                    std::string(expected_magic.data(), 4) + "'");
  file.version = r.u32();
  if (file.version != expected_version)
    throw DataError("unsupported checkpoint version " + std::to_string(file.version));
  if (stored != checksum(buf.data(), body)) throw DataError("checkpoint checksum mismatch: " + path.string());

  file.metadata = r.bytes();
  std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes();
    std::uint32_t rank = r.u32();
    if (rank != 2) throw DataError("tensor '" + t.name + "' has unsupported rank " + std::to_string(rank));
    std::uint32_t rows = r.u32();
    std::uint32_t cols = r.u32();
    t.value.resize(rows, cols);
    for (std::uint32_t a = 0; a < rows; ++a)
      for (std::uint32_t b = 0; b < cols; ++b) t.value(a, b) = r.f32();
    file.tensors.push_back(std::move(t));
  }
  if (r.pos() != body) throw DataError("trailing bytes in checkpoint: " + path.string());
  return file;
}

void round_to_float(Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

}  // namespace distnav
