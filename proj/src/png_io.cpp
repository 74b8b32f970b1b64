#include "migc/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace migc {

namespace {
struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;
}  // namespace

void write_png(const std::string& path, const Tensor& img) {
  if (img.shape.size() != 3 || img.shape[0] != 3)
    throw ConfigError("write_png expects a [3,H,W] tensor");
  const int H = img.shape[1], W = img.shape[2];

  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");

  png_structp pp = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!pp) throw NumericError("png writer allocation failed");
  png_infop ip = png_create_info_struct(pp);
  if (!ip) {
    png_destroy_write_struct(&pp, nullptr);
    throw NumericError("png writer allocation failed");
  }
  std::vector<png_byte> row(static_cast<size_t>(W) * 3);
  if (setjmp(png_jmpbuf(pp))) {
    png_destroy_write_struct(&pp, &ip);
    throw ConfigError("png write failed for '" + path + "'");
  }
  png_init_io(pp, f.get());
  png_set_IHDR(pp, ip, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(pp, ip);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = img(c, y, x);
        v = v < 0 ? 0 : (v > 1 ? 1 : v);
        row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] =
            static_cast<png_byte>(std::lround(v * 255.0));
      }
    png_write_row(pp, row.data());
  }
  png_write_end(pp, ip);
  png_destroy_write_struct(&pp, &ip);
}

Tensor read_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ConfigError("cannot open '" + path + "' for reading");
  png_byte header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw ConfigError("'" + path + "' is not a png file");

  png_structp pp = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!pp) throw NumericError("png reader allocation failed");
  png_infop ip = png_create_info_struct(pp);
  if (!ip) {
    png_destroy_read_struct(&pp, nullptr, nullptr);
    throw NumericError("png reader allocation failed");
  }
  if (setjmp(png_jmpbuf(pp))) {
    png_destroy_read_struct(&pp, &ip, nullptr);
    throw ConfigError("png read failed for '" + path + "'");
  }
  png_init_io(pp, f.get());
  png_set_sig_bytes(pp, 8);
  png_read_info(pp, ip);

  const png_uint_32 W = png_get_image_width(pp, ip), H = png_get_image_height(pp, ip);
  // normalize every variant down to 8-bit RGB
  png_set_expand(pp);
  if (png_get_bit_depth(pp, ip) == 16) png_set_strip_16(pp);
  if (png_get_color_type(pp, ip) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(pp, ip) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(pp);
  png_set_strip_alpha(pp);
  png_read_update_info(pp, ip);
  if (png_get_rowbytes(pp, ip) != static_cast<size_t>(W) * 3) {
    png_destroy_read_struct(&pp, &ip, nullptr);
    throw ConfigError("'" + path + "' did not normalize to 8-bit rgb");
  }

  Tensor img({3, static_cast<int>(H), static_cast<int>(W)});
  std::vector<png_byte> row(static_cast<size_t>(W) * 3);
  for (png_uint_32 y = 0; y < H; ++y) {
    png_read_row(pp, row.data(), nullptr);
    for (png_uint_32 x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        img(c, static_cast<int>(y), static_cast<int>(x)) =
            row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] / 255.0;
  }
  png_read_end(pp, nullptr);
  png_destroy_read_struct(&pp, &ip, nullptr);
  return img;
}

}  // namespace migc
