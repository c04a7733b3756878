#pragma once

// File formats: 8-bit PNG, binary PGM/PPM, Middlebury .flo flow files, and
// sorted glob expansion for frame sequences.

#include <glob.h>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "core.hpp"

namespace flowdeblur {

class IoError : public Error {
 public:
  using Error::Error;
};

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

namespace detail {

inline std::string lower_extension(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

inline File open_file(const std::string& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path);
  return f;
}

// Next whitespace-delimited header token of a PNM file, skipping comments.
inline int pnm_token(std::istream& in, const std::string& path) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    try {
      return std::stoi(tok);
    } catch (const std::exception&) {
      break;
    }
  }
  throw IoError("corrupt PNM header in " + path);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PNM

inline Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) throw IoError("not a binary PGM/PPM file: " + path);
  const int channels = magic[1] == '5' ? 1 : 3;
  const int w = detail::pnm_token(in, path);
  const int h = detail::pnm_token(in, path);
  const int maxval = detail::pnm_token(in, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw IoError("corrupt PNM header in " + path);
  in.get();
  const int bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) *
                                 static_cast<std::size_t>(channels * bytes));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError("truncated PNM data in " + path);
  Image img(w, h, channels);
  for (std::size_t k = 0; k < img.data.size(); ++k) {
    const int v = bytes == 1 ? buf[k] : (buf[2 * k] << 8) | buf[2 * k + 1];
    img.data[k] = static_cast<double>(v) / maxval;
  }
  return img;
}

inline void write_pnm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<char> buf(img.data.size());
  for (std::size_t k = 0; k < img.data.size(); ++k) buf[k] = static_cast<char>(quantize(img.data[k]));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// PNG

inline Image read_png(const std::string& path) {
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str())) throw IoError("cannot read PNG " + path + ": " + im.message);
  const bool color = (im.format & PNG_FORMAT_FLAG_COLOR) != 0;
  im.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = im.message;
    png_image_free(&im);
    throw IoError("corrupt PNG " + path + ": " + msg);
  }
  Image img(static_cast<int>(im.width), static_cast<int>(im.height), channels);
  for (std::size_t k = 0; k < img.data.size(); ++k) img.data[k] = buf[k] / 255.0;
  return img;
}

inline void write_png(const std::string& path, const Image& img) {
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(img.width);
  im.height = static_cast<png_uint_32>(img.height);
  im.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(img.data.size());
  for (std::size_t k = 0; k < img.data.size(); ++k) buf[k] = quantize(img.data[k]);
  if (!png_image_write_to_file(&im, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path + ": " + im.message);
}

// Dispatches on the file extension (.png, .pgm, .ppm, .pnm).
inline Image read_image(const std::string& path) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return read_pnm(path);
  throw IoError("unsupported image format: " + path);
}

inline void write_image(const std::string& path, const Image& img) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".png") return write_png(path, img);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return write_pnm(path, img);
  throw IoError("unsupported image format: " + path);
}

// ---------------------------------------------------------------------------
// Middlebury .flo: "PIEH", int32 width, int32 height, float32 (u, v) pairs,
// all little-endian.

namespace detail {

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get_le(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated flow file " + path);
  return v;
}

}  // namespace detail

inline void write_flo(const std::string& path, const FlowField& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write("PIEH", 4);
  detail::put_le<std::int32_t>(out, f.width);
  detail::put_le<std::int32_t>(out, f.height);
  for (std::size_t k = 0; k < f.pixel_count(); ++k) {
    detail::put_le<float>(out, static_cast<float>(f.u[k]));
    detail::put_le<float>(out, static_cast<float>(f.v[k]));
  }
  if (!out) throw IoError("write failed: " + path);
}

inline FlowField read_flo(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PIEH", 4) != 0) throw IoError("bad flow file magic in " + path);
  const auto w = detail::get_le<std::int32_t>(in, path);
  const auto h = detail::get_le<std::int32_t>(in, path);
  if (w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16)) throw IoError("bad flow file size in " + path);
  FlowField f(w, h);
  for (std::size_t k = 0; k < f.pixel_count(); ++k) {
    f.u[k] = detail::get_le<float>(in, path);
    f.v[k] = detail::get_le<float>(in, path);
  }
  return f;
}

// ---------------------------------------------------------------------------

// Paths matching a shell pattern, sorted lexicographically.
inline std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g;
  std::memset(&g, 0, sizeof g);
  std::vector<std::string> out;
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  if (rc == 0)
    for (std::size_t k = 0; k < g.gl_pathc; ++k) out.emplace_back(g.gl_pathv[k]);
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw IoError("glob failed for " + pattern);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace flowdeblur
