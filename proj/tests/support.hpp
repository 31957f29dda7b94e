// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

// Shared test helpers: scratch directories, synthetic images, and reference
// implementations written independently of the library code.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "misbench/image.hpp"
#include "misbench/label_map.hpp"

namespace testsupport {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("misbench-" + tag + "-" + std::to_string(rd()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

/// Smooth gradient plus a few hard edges; never constant.
inline misbench::Image gradient_image(int w, int h, unsigned salt = 0) {
  misbench::Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = static_cast<std::uint8_t>((x * 255) / std::max(1, w - 1));
      img.at(x, y, 1) = static_cast<std::uint8_t>((y * 255) / std::max(1, h - 1));
      img.at(x, y, 2) = static_cast<std::uint8_t>(((x / 8 + y / 8 + salt) % 2) ? 220 : 40);
    }
  }
  return img;
}

inline misbench::Image random_image(int w, int h, std::mt19937_64& gen) {
  misbench::Image img(w, h);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(d(gen));
  return img;
}

inline misbench::LabelMap random_label_map(int w, int h, std::mt19937_64& gen, double ignore_p = 0.1) {
  misbench::LabelMap m(w, h);
  std::uniform_int_distribution<int> cls(0, 18);
  std::bernoulli_distribution ign(ignore_p);
  for (auto& v : m.labels) v = ign(gen) ? 255 : static_cast<std::uint8_t>(cls(gen));
  return m;
}

// ---- reference implementations -------------------------------------------

struct OracleSeg {
  std::array<std::optional<double>, 19> iou;
  std::optional<double> miou;
  std::optional<double> pa;
};

/// Per-class IoU by counting pixels directly over a list of (pred, gt) map
/// pairs. Pixels with gt = 255 are excluded; pred = 255 is never a hit.
inline OracleSeg oracle_segmentation(const std::vector<std::pair<misbench::LabelMap, misbench::LabelMap>>& pairs) {
  OracleSeg out;
  std::array<std::uint64_t, 19> inter{}, uni{};
  std::uint64_t valid = 0, correct = 0;
  for (const auto& [pred, gt] : pairs) {
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
      const int g = gt.labels[i];
      const int p = pred.labels[i];
      if (g == 255) continue;
      ++valid;
      if (p == g) ++correct;
      for (int c = 0; c < 19; ++c) {
        const bool in_g = g == c;
        const bool in_p = p == c;
        if (in_g && in_p) ++inter[c];
        if (in_g || in_p) ++uni[c];
      }
    }
  }
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < 19; ++c) {
    if (uni[c] == 0) continue;
    out.iou[c] = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    sum += *out.iou[c];
    ++defined;
  }
  if (defined > 0) out.miou = sum / defined;
  if (valid > 0) out.pa = static_cast<double>(correct) / static_cast<double>(valid);
  return out;
}

/// Pearson r from the raw-sum textbook form
///   (n Σxy − Σx Σy) / sqrt((n Σx² − (Σx)²)(n Σy² − (Σy)²)),
/// accumulated in long double.
inline double textbook_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const long double n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double a = x[i], b = y[i];
    sx += a;
    sy += b;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
  }
  const long double num = n * sxy - sx * sy;
  const long double den = std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  return static_cast<double>(num / den);
}

/// Ranks by counting: rank(v_i) = #{v_j < v_i} + (#{v_j == v_i} + 1) / 2.
inline std::vector<double> counting_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      if (w < v[i]) ++less;
      if (w == v[i]) ++equal;
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

inline double textbook_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return textbook_pearson(counting_ranks(x), counting_ranks(y));
}

}  // namespace testsupport
