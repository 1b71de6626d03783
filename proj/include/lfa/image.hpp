#pragma once

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "lfa/model_io.hpp"

namespace lfa {

// 8-bit interleaved RGB image, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(w * h * 3, fill) {}

  bool empty() const noexcept { return width == 0 || height == 0; }
  std::uint8_t* at(std::size_t x, std::size_t y) { return &pixels[(y * width + x) * 3]; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const {
    return &pixels[(y * width + x) * 3];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

// Single-channel float plane, row-major.
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;

  float& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  float at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

inline constexpr float kLumaR = 0.299f;
inline constexpr float kLumaG = 0.587f;
inline constexpr float kLumaB = 0.114f;

// Luminance in the 0..255 range.
inline Plane to_grayscale(const Image& img) {
  Plane p{img.width, img.height, std::vector<float>(img.width * img.height)};
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const std::uint8_t* px = &img.pixels[i * 3];
    p.values[i] = kLumaR * px[0] + kLumaG * px[1] + kLumaB * px[2];
  }
  return p;
}

// Bilinear resampling with pixel-centre alignment (source coordinate
// (x + 0.5) * scale - 0.5, clamped at the borders).
inline Plane resize_bilinear(const Plane& src, std::size_t out_w, std::size_t out_h) {
  if (src.width == 0 || src.height == 0 || out_w == 0 || out_h == 0) {
    throw std::invalid_argument("resize_bilinear: empty image");
  }
  Plane dst{out_w, out_h, std::vector<float>(out_w * out_h)};
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  std::vector<std::size_t> x0(out_w), x1(out_w);
  std::vector<float> fx(out_w);
  for (std::size_t x = 0; x < out_w; ++x) {
    double u = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
    x0[x] = static_cast<std::size_t>(u);
    x1[x] = std::min(x0[x] + 1, src.width - 1);
    fx[x] = static_cast<float>(u - x0[x]);
  }
  for (std::size_t y = 0; y < out_h; ++y) {
    double v = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(v);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const float fy = static_cast<float>(v - y0);
    const float* r0 = &src.values[y0 * src.width];
    const float* r1 = &src.values[y1 * src.width];
    for (std::size_t x = 0; x < out_w; ++x) {
      const float top = r0[x0[x]] + (r0[x1[x]] - r0[x0[x]]) * fx[x];
      const float bot = r1[x0[x]] + (r1[x1[x]] - r1[x0[x]]) * fx[x];
      dst.values[y * out_w + x] = top + (bot - top) * fy;
    }
  }
  return dst;
}

inline Image resize_bilinear(const Image& src, std::size_t out_w, std::size_t out_h) {
  Image out(out_w, out_h);
  for (int ch = 0; ch < 3; ++ch) {
    Plane p{src.width, src.height, std::vector<float>(src.width * src.height)};
    for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] = src.pixels[i * 3 + ch];
    Plane r = resize_bilinear(p, out_w, out_h);
    for (std::size_t i = 0; i < r.values.size(); ++i) {
      out.pixels[i * 3 + ch] =
          static_cast<std::uint8_t>(std::clamp(std::lround(r.values[i]), 0L, 255L));
    }
  }
  return out;
}

inline Image gray_to_rgb(const Plane& p) {
  Image out(p.width, p.height);
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    auto v = static_cast<std::uint8_t>(std::clamp(std::lround(p.values[i]), 0L, 255L));
    out.pixels[i * 3] = out.pixels[i * 3 + 1] = out.pixels[i * 3 + 2] = v;
  }
  return out;
}

// Integer-rect crop; caller guarantees the rect lies inside the image.
inline Image crop(const Image& img, std::size_t x, std::size_t y, std::size_t w,
                  std::size_t h) {
  if (x + w > img.width || y + h > img.height || w == 0 || h == 0) {
    throw std::invalid_argument("crop rectangle outside image");
  }
  Image out(w, h);
  for (std::size_t r = 0; r < h; ++r) {
    std::memcpy(out.at(0, r), img.at(x, y + r), w * 3);
  }
  return out;
}

// ---------------------------------------------------------------- codecs

enum class MediaType { Png, Jpeg, Unknown };

inline MediaType sniff_media_type(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) return MediaType::Png;
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return MediaType::Jpeg;
  }
  return MediaType::Unknown;
}

inline const char* media_type_name(MediaType t) {
  switch (t) {
    case MediaType::Png: return "image/png";
    case MediaType::Jpeg: return "image/jpeg";
    default: return "application/octet-stream";
  }
}

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png encode: ") + pi.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png encode: ") + pi.message);
  }
  out.resize(size);
  return out;
}

inline Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size())) {
    throw std::runtime_error(std::string("png decode: ") + pi.message);
  }
  pi.format = PNG_FORMAT_RGB;
  Image img(pi.width, pi.height);
  if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw std::runtime_error(std::string("png decode: ") + pi.message);
  }
  return img;
}

namespace detail {
struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}
}  // namespace detail

inline Image decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  detail::JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = detail::jpeg_error_exit;
  Image img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw std::runtime_error(std::string("jpeg decode: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.width = cinfo.output_width;
  img.height = cinfo.output_height;
  img.pixels.assign(img.width * img.height * 3, 0);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.at(0, cinfo.output_scanline);
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

inline std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality = 92) {
  jpeg_compress_struct cinfo;
  detail::JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = detail::jpeg_error_exit;
  unsigned char* buf = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buf);
    throw std::runtime_error(std::string("jpeg encode: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buf, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<std::uint8_t*>(img.at(0, cinfo.next_scanline));
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(buf, buf + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buf);
  return out;
}

inline Image decode_image(std::span<const std::uint8_t> bytes) {
  switch (sniff_media_type(bytes)) {
    case MediaType::Png: return decode_png(bytes);
    case MediaType::Jpeg: return decode_jpeg(bytes);
    default: throw std::runtime_error("unsupported image format");
  }
}

inline Image read_image(const std::filesystem::path& path) {
  return decode_image(read_file_bytes(path));
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  write_file_bytes(path, encode_png(img));
}

}  // namespace lfa
