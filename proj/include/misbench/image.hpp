// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace misbench {

/// Row-major 8-bit RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // width * height * 3

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(checked_size(w, h) * 3, fill) {}
  Image(int w, int h, std::vector<std::uint8_t> pixels)
      : width(w), height(h), data(std::move(pixels)) {
    if (data.size() != checked_size(w, h) * 3) {
      throw std::invalid_argument("Image: data length " + std::to_string(data.size()) +
                                  " != " + std::to_string(w) + "x" + std::to_string(h) + "x3");
    }
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  std::uint8_t& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  bool operator==(const Image&) const = default;

  static std::size_t checked_size(int w, int h) {
    if (w < 1 || h < 1) {
      throw std::invalid_argument("Image: dimensions must be >= 1, got " + std::to_string(w) +
                                  "x" + std::to_string(h));
    }
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  }
};

}  // namespace misbench
