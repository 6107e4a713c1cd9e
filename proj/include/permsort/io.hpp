#pragma once

#include <png.h>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "permsort/numkernel.hpp"
#include "permsort/objective.hpp"
#include "permsort/permutation.hpp"

namespace permsort {

/// Raised when a file cannot be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Headerless comma-separated decimals, one row per line, uniform column count.
inline Matrix parse_csv(std::string_view text) {
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t count = 0;
    while (true) {
      const auto comma = line.find(',');
      std::string_view cell = detail::trim(line.substr(0, comma));
      ++count;
      double v = 0.0;
      if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw Error("csv: line " + std::to_string(line_no) + ", column " + std::to_string(count) +
                    ": not a number '" + std::string(cell) + "'");
      values.push_back(v);
      if (comma == std::string_view::npos) break;
      line.remove_prefix(comma + 1);
    }
    if (rows == 0) cols = count;
    if (count != cols)
      throw Error("csv: line " + std::to_string(line_no) + " has " + std::to_string(count) + " columns, expected " +
                  std::to_string(cols));
    ++rows;
  }
  if (rows == 0) throw Error("csv: no data rows");
  Matrix m(rows, cols);
  std::copy(values.begin(), values.end(), m.values().begin());
  return m;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error while reading '" + path + "'");
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("error while writing '" + path + "'");
}

inline Matrix load_csv(const std::string& path) { return parse_csv(read_file(path)); }

/// Shortest decimal form that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string to_csv(const Matrix& m) {
  std::string out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

inline void save_csv(const std::string& path, const Matrix& m) { write_file(path, to_csv(m)); }

/// One original row index per line, in grid (row-major) order.
inline std::string permutation_csv(const HardPermutation& h) {
  std::string out;
  for (std::size_t v : h.perm) {
    out += std::to_string(v);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data

/// n x 3 matrix of i.i.d. uniform [0, 1) values.
inline Matrix generate_colors(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error("generate_colors: n must be >= 1");
  Rng rng(seed);
  Matrix m(n, 3);
  for (double& v : m.values()) v = uniform01(rng);
  return m;
}

// ---------------------------------------------------------------------------
// PNG

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return &rgb[(y * width + x) * 3]; }
};

/// round(255 * clamp(v, 0, 1)), halves rounded up.
inline std::uint8_t to_byte(double v) {
  const double c = std::min(1.0, std::max(0.0, v));
  return static_cast<std::uint8_t>(std::floor(255.0 * c + 0.5));
}

/// Each grid cell becomes a cell_px x cell_px block of its colour. Rows must
/// have 3 columns unless `project` is set, which uses the first three.
inline Image render_grid(const Matrix& x, const GridShape& g, std::size_t cell_px, bool project = false) {
  check_grid(g, x.rows());
  if (cell_px == 0) throw Error("render_grid: cell size must be >= 1");
  if (x.cols() != 3 && !(project && x.cols() > 3))
    throw Error("render_grid: vectors have " + std::to_string(x.cols()) +
                " dimensions, need 3 (use --project to render the first three of D > 3)");
  Image img{g.n_x * cell_px, g.n_y * cell_px, {}};
  img.rgb.resize(img.width * img.height * 3);
  for (std::size_t py = 0; py < img.height; ++py) {
    for (std::size_t px = 0; px < img.width; ++px) {
      const std::size_t cell = (py / cell_px) * g.n_x + px / cell_px;
      for (std::size_t c = 0; c < 3; ++c) img.rgb[(py * img.width + px) * 3 + c] = to_byte(x(cell, c));
    }
  }
  return img;
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline void write_png(const std::string& path, const Image& img) {
  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing '" + path + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + y * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void render_grid_png(const Matrix& x, const GridShape& g, std::size_t cell_px, const std::string& path,
                            bool project = false) {
  write_png(path, render_grid(x, g, cell_px, project));
}

/// Decodes an 8-bit RGB or RGBA PNG (alpha dropped).
inline Image read_png(const std::string& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open '" + path + "' for reading");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading '" + path + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) != 8 || (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_RGBA)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("'" + path + "' is not an 8-bit RGB PNG");
  }
  if (color == PNG_COLOR_TYPE_RGBA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  Image img{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3)};
  for (std::size_t y = 0; y < height; ++y) png_read_row(png, img.rgb.data() + y * width * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace permsort
