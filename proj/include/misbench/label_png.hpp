// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "misbench/label_map.hpp"
#include "misbench/png_io.hpp"

namespace misbench::png {

inline std::vector<std::uint8_t> encode(const LabelMap& map) {
  return detail::encode(map.width, map.height, PNG_FORMAT_GRAY, map.labels.data());
}

/// Single-channel 8-bit trainId PNG. Colour or 16-bit files are rejected
/// rather than converted, since conversion would alter class ids.
inline LabelMap decode_label_map(const std::vector<std::uint8_t>& bytes,
                                 const std::string& what = "label PNG") {
  detail::ImageGuard g;
  if (!png_image_begin_read_from_memory(&g.img, bytes.data(), bytes.size())) {
    throw std::runtime_error(what + ": " + g.img.message);
  }
  if (g.img.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_ALPHA)) {
    throw std::runtime_error(what + ": expected 8-bit single-channel PNG");
  }
  g.img.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> labels(PNG_IMAGE_SIZE(g.img));
  if (!png_image_finish_read(&g.img, nullptr, labels.data(), 0, nullptr)) {
    throw std::runtime_error(what + ": " + g.img.message);
  }
  try {
    return LabelMap(static_cast<int>(g.img.width), static_cast<int>(g.img.height),
                    std::move(labels));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(what + ": " + e.what());
  }
}

inline LabelMap read_label_map(const std::filesystem::path& path) {
  return decode_label_map(misbench::detail::read_bytes(path), path.string());
}

inline void write(const std::filesystem::path& path, const LabelMap& map) {
  misbench::detail::write_bytes(path, encode(map));
}

}  // namespace misbench::png
