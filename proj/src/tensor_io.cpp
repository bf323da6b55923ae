#include "mmga/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace mmga {

namespace {
constexpr char kMagic[8] = {'M', 'M', 'G', 'A', '-', 'T', 'N', 'S'};
}

namespace le {

void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                  static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes.data(), 4);
}

void write_f32(std::ostream& out, float v) { write_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t read_u32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw Error("io", "unexpected end of stream");
  return std::uint32_t(bytes[0]) | (std::uint32_t(bytes[1]) << 8) | (std::uint32_t(bytes[2]) << 16) |
         (std::uint32_t(bytes[3]) << 24);
}

float read_f32(std::istream& in) { return std::bit_cast<float>(read_u32(in)); }

}  // namespace le

void write_tensor(std::ostream& out, const Tensorf& tensor) {
  out.write(kMagic, sizeof(kMagic));
  const Shape& s = tensor.shape();
  for (Index e : {s.n, s.c, s.h, s.w}) le::write_u32(out, static_cast<std::uint32_t>(e));
  for (Index i = 0; i < tensor.size(); ++i) le::write_f32(out, tensor.values()[i]);
  if (!out) throw Error("io", "failed writing tensor");
}

Tensorf read_tensor(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error("io", "bad tensor magic");
  Shape s;
  s.n = le::read_u32(in);
  s.c = le::read_u32(in);
  s.h = le::read_u32(in);
  s.w = le::read_u32(in);
  Tensorf t(s);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = le::read_f32(in);
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensorf& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
}

Tensorf load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace mmga
