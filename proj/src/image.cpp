#include "dualpath/image.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "dualpath/errors.hpp"

namespace dualpath {

namespace {

void write_netpbm(const std::filesystem::path& path, const Image8& image, const char* magic, std::size_t channels) {
  if (image.channels != channels) {
    throw FormatError(std::string(magic) + " needs " + std::to_string(channels) + " channels, image has " +
                      std::to_string(image.channels));
  }
  if (image.pixels.size() != image.width * image.height * channels) throw FormatError("image buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << magic << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// Reads one header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in, const std::filesystem::path& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw FormatError("truncated header in " + path.string());
  return tok;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = header_token(in, path);
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError("bad header field '" + tok + "' in " + path.string());
  }
  return std::stoull(tok);
}

Image8 read_netpbm(const std::filesystem::path& path, const char* magic, std::size_t channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  if (header_token(in, path) != magic) throw FormatError(path.string() + " is not a " + magic + " file");
  Image8 img;
  img.width = header_number(in, path);
  img.height = header_number(in, path);
  if (header_number(in, path) != 255) throw FormatError("only maxval 255 is supported: " + path.string());
  if (img.width == 0 || img.height == 0) throw FormatError("empty image in " + path.string());
  img.channels = channels;
  img.pixels.resize(img.width * img.height * channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw FormatError("truncated pixel data in " + path.string());
  }
  return img;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image8& image) { write_netpbm(path, image, "P6", 3); }
Image8 read_ppm(const std::filesystem::path& path) { return read_netpbm(path, "P6", 3); }
void write_pgm(const std::filesystem::path& path, const Image8& image) { write_netpbm(path, image, "P5", 1); }
Image8 read_pgm(const std::filesystem::path& path) { return read_netpbm(path, "P5", 1); }

}  // namespace dualpath
