// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <png.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "misbench/detail/files.hpp"
#include "misbench/image.hpp"

namespace misbench::png {

namespace detail {

struct ImageGuard {
  png_image img{};
  ImageGuard() {
    img.version = PNG_IMAGE_VERSION;
  }
  ~ImageGuard() { png_image_free(&img); }
  ImageGuard(const ImageGuard&) = delete;
  ImageGuard& operator=(const ImageGuard&) = delete;
};

inline std::vector<std::uint8_t> encode(int width, int height, png_uint_32 format,
                                        const std::uint8_t* pixels) {
  ImageGuard g;
  g.img.width = static_cast<png_uint_32>(width);
  g.img.height = static_cast<png_uint_32>(height);
  g.img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&g.img, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw std::runtime_error(std::string("PNG encode failed: ") + g.img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&g.img, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw std::runtime_error(std::string("PNG encode failed: ") + g.img.message);
  }
  out.resize(size);
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Image& img) {
  return detail::encode(img.width, img.height, PNG_FORMAT_RGB, img.data.data());
}

/// Any 8-bit PNG, converted to RGB with alpha dropped.
inline Image decode_image(const std::vector<std::uint8_t>& bytes, const std::string& what = "PNG") {
  detail::ImageGuard g;
  if (!png_image_begin_read_from_memory(&g.img, bytes.data(), bytes.size())) {
    throw std::runtime_error(what + ": " + g.img.message);
  }
  g.img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(g.img));
  png_color background{0, 0, 0};
  if (!png_image_finish_read(&g.img, &background, pixels.data(), 0, nullptr)) {
    throw std::runtime_error(what + ": " + g.img.message);
  }
  return Image(static_cast<int>(g.img.width), static_cast<int>(g.img.height), std::move(pixels));
}

inline Image read_image(const std::filesystem::path& path) {
  return decode_image(misbench::detail::read_bytes(path), path.string());
}

inline void write(const std::filesystem::path& path, const Image& img) {
  misbench::detail::write_bytes(path, encode(img));
}

}  // namespace misbench::png
