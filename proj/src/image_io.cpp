#include "mmga/image_io.hpp"

#include <fstream>
#include <sstream>

namespace mmga {

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string token;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string ignored;
      std::getline(in, ignored);
      if (!token.empty()) break;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(ch);
  }
  return token;
}

struct PnmHeader {
  Index width = 0, height = 0;
};

PnmHeader read_header(std::istream& in, const std::string& magic, const std::filesystem::path& path) {
  if (next_token(in) != magic) throw Error("io", path.string() + ": expected " + magic + " image");
  PnmHeader h;
  try {
    h.width = std::stol(next_token(in));
    h.height = std::stol(next_token(in));
    if (std::stol(next_token(in)) != 255) throw Error("io", path.string() + ": maxval must be 255");
  } catch (const std::logic_error&) {
    throw Error("io", path.string() + ": malformed header");
  }
  if (h.width <= 0 || h.height <= 0) throw Error("io", path.string() + ": empty image");
  return h;
}

}  // namespace

ByteMap read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path.string());
  const PnmHeader h = read_header(in, "P5", path);
  ByteMap map(h.height, h.width);
  if (!in.read(reinterpret_cast<char*>(map.data()), map.size()))
    throw Error("io", path.string() + ": truncated pixel data");
  return map;
}

void write_pgm(const std::filesystem::path& path, const ByteMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot open " + path.string() + " for writing");
  out << "P5\n" << map.cols() << " " << map.rows() << "\n255\n";
  out.write(reinterpret_cast<const char*>(map.data()), map.size());
  if (!out) throw Error("io", "failed writing " + path.string());
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path.string());
  const PnmHeader h = read_header(in, "P6", path);
  RgbImage image(h.height, h.width);
  if (!in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size())))
    throw Error("io", path.string() + ": truncated pixel data");
  return image;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw Error("io", "failed writing " + path.string());
}

}  // namespace mmga
