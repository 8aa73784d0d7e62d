#include "rfhit/raster.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

namespace rfhit::raster {
namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int64_t header_int(std::istream& in, const std::filesystem::path& path, const char* what) {
  const std::string tok = header_token(in);
  try {
    size_t used = 0;
    const long long v = std::stoll(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw RasterError(path.string() + ": bad " + what + " '" + tok + "' in header");
  }
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RasterError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RasterError("cannot write " + path.string());
  return out;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  if (header_token(in) != "P5") throw RasterError(path.string() + ": not a binary PGM (P5) file");
  GrayImage img;
  img.width = header_int(in, path, "width");
  img.height = header_int(in, path, "height");
  const int64_t maxval = header_int(in, path, "max value");
  if (maxval > 65535) throw RasterError(path.string() + ": max value above 65535");
  img.max_value = static_cast<int>(maxval);
  const size_t n = static_cast<size_t>(img.width * img.height);
  img.pixels.resize(n);
  if (maxval < 256) {
    std::vector<uint8_t> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) throw RasterError(path.string() + ": truncated pixel data");
    std::copy(raw.begin(), raw.end(), img.pixels.begin());
  } else {
    std::vector<uint8_t> raw(2 * n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(2 * n));
    if (static_cast<size_t>(in.gcount()) != 2 * n) throw RasterError(path.string() + ": truncated pixel data");
    for (size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<uint16_t>(raw[2 * i] << 8 | raw[2 * i + 1]);
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  if (img.max_value < 1 || img.max_value > 65535 ||
      img.pixels.size() != static_cast<size_t>(img.width * img.height)) {
    throw RasterError("write_pgm: inconsistent image for " + path.string());
  }
  for (const auto v : img.pixels) {
    if (v > img.max_value) throw RasterError("write_pgm: pixel above max value in " + path.string());
  }
  std::ofstream out = open_out(path);
  out << "P5\n" << img.width << ' ' << img.height << '\n' << img.max_value << '\n';
  if (img.max_value < 256) {
    std::vector<uint8_t> raw(img.pixels.begin(), img.pixels.end());
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  } else {
    std::vector<uint8_t> raw(2 * img.pixels.size());
    for (size_t i = 0; i < img.pixels.size(); ++i) {
      raw[2 * i] = static_cast<uint8_t>(img.pixels[i] >> 8);
      raw[2 * i + 1] = static_cast<uint8_t>(img.pixels[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  }
  if (!out) throw RasterError("write failed for " + path.string());
}

FloatImage read_pfm(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  if (header_token(in) != "Pf") throw RasterError(path.string() + ": not a grayscale PFM (Pf) file");
  FloatImage img;
  img.width = header_int(in, path, "width");
  img.height = header_int(in, path, "height");
  const std::string scale_tok = header_token(in);
  double scale = 0.0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    throw RasterError(path.string() + ": bad scale '" + scale_tok + "'");
  }
  const bool little = scale < 0.0;
  const size_t n = static_cast<size_t>(img.width * img.height);
  std::vector<uint32_t> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(4 * n));
  if (static_cast<size_t>(in.gcount()) != 4 * n) throw RasterError(path.string() + ": truncated pixel data");
  const bool swap = little != (std::endian::native == std::endian::little);
  img.pixels.resize(n);
  for (int64_t y = 0; y < img.height; ++y) {
    for (int64_t x = 0; x < img.width; ++x) {
      uint32_t bits = raw[static_cast<size_t>((img.height - 1 - y) * img.width + x)];
      if (swap) bits = __builtin_bswap32(bits);
      img.pixels[static_cast<size_t>(y * img.width + x)] = std::bit_cast<float>(bits);
    }
  }
  return img;
}

void write_pfm(const std::filesystem::path& path, const FloatImage& img) {
  if (img.pixels.size() != static_cast<size_t>(img.width * img.height)) {
    throw RasterError("write_pfm: inconsistent image for " + path.string());
  }
  std::ofstream out = open_out(path);
  const bool little = std::endian::native == std::endian::little;
  out << "Pf\n" << img.width << ' ' << img.height << '\n' << (little ? "-1.0" : "1.0") << '\n';
  for (int64_t y = img.height - 1; y >= 0; --y) {
    out.write(reinterpret_cast<const char*>(img.pixels.data() + y * img.width),
              static_cast<std::streamsize>(4 * img.width));
  }
  if (!out) throw RasterError("write failed for " + path.string());
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  if (img.pixels.size() != static_cast<size_t>(3 * img.width * img.height)) {
    throw RasterError("write_ppm: inconsistent image for " + path.string());
  }
  std::ofstream out = open_out(path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw RasterError("write failed for " + path.string());
}

}  // namespace rfhit::raster
