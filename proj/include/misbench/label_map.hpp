// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "misbench/constants.hpp"
#include "misbench/image.hpp"

namespace misbench {

/// Row-major single-channel trainId raster: 0..18 or 255 (ignore).
struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(int w, int h, std::uint8_t fill = kIgnoreLabel)
      : width(w), height(h), labels(Image::checked_size(w, h), fill) {
    validate();
  }
  LabelMap(int w, int h, std::vector<std::uint8_t> values)
      : width(w), height(h), labels(std::move(values)) {
    if (labels.size() != Image::checked_size(w, h)) {
      throw std::invalid_argument("LabelMap: data length " + std::to_string(labels.size()) +
                                  " != " + std::to_string(w) + "x" + std::to_string(h));
    }
    validate();
  }

  std::uint8_t& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  std::string shape() const { return std::to_string(width) + "x" + std::to_string(height); }

  void validate() const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto v = labels[i];
      if (v >= kNumClasses && v != kIgnoreLabel) {
        throw std::invalid_argument("LabelMap: value " + std::to_string(v) + " at index " +
                                    std::to_string(i) + " is neither a trainId nor ignore");
      }
    }
  }

  bool operator==(const LabelMap&) const = default;
};

}  // namespace misbench
