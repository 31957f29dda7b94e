// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

// Degradation operators: horizontal motion blur, low-light (gamma + sensor
// noise) and rectangular occlusion, each at three severities.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "misbench/image.hpp"
#include "misbench/rng.hpp"

namespace misbench::corruption {

enum class Kind : std::uint8_t { LowLight = 0, MotionBlur = 1, Occlusion = 2 };

inline std::string_view kind_prefix(Kind k) {
  switch (k) {
    case Kind::LowLight: return "ll";
    case Kind::MotionBlur: return "mb";
    case Kind::Occlusion: return "occ";
  }
  return "?";
}

inline void check_severity(int severity) {
  if (severity < 1 || severity > 3) {
    throw std::invalid_argument("severity must be 1, 2 or 3, got " + std::to_string(severity));
  }
}

struct CorruptionSpec {
  Kind kind = Kind::MotionBlur;
  int severity = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (static_cast<int>(kind) > 2) {
      throw std::invalid_argument("CorruptionSpec: unknown kind " +
                                  std::to_string(static_cast<int>(kind)));
    }
    check_severity(severity);
  }
};

/// One evaluation condition: clean, or a (kind, severity) pair.
struct Condition {
  std::optional<Kind> kind;
  int severity = 0;

  bool is_clean() const { return !kind.has_value(); }

  std::string name() const {
    if (!kind) return "clean";
    return std::string(kind_prefix(*kind)) + std::to_string(severity);
  }

  static Condition clean() { return {}; }

  static Condition parse(std::string_view name) {
    if (name == "clean") return clean();
    for (Kind k : {Kind::LowLight, Kind::MotionBlur, Kind::Occlusion}) {
      const auto prefix = kind_prefix(k);
      if (name.size() == prefix.size() + 1 && name.substr(0, prefix.size()) == prefix) {
        const int s = name.back() - '0';
        if (s >= 1 && s <= 3) return Condition{k, s};
      }
    }
    throw std::invalid_argument("unknown condition '" + std::string(name) + "'");
  }

  /// Report order: clean, ll1-3, mb1-3, occ1-3.
  int order() const { return kind ? 1 + static_cast<int>(*kind) * 3 + (severity - 1) : 0; }

  bool operator==(const Condition&) const = default;
};

inline std::vector<Condition> all_conditions() {
  std::vector<Condition> out{Condition::clean()};
  for (Kind k : {Kind::LowLight, Kind::MotionBlur, Kind::Occlusion}) {
    for (int s = 1; s <= 3; ++s) out.push_back(Condition{k, s});
  }
  return out;
}

inline std::vector<Condition> degraded_conditions() {
  auto all = all_conditions();
  return {all.begin() + 1, all.end()};
}

enum class NoiseMode { PerChannel, SharedAcrossChannels };

/// Severity-indexed parameters. Defaults follow the published protocol; the
/// noise sigmas are not published and are configurable.
struct Params {
  std::array<int, 3> blur_kernel{7, 15, 25};
  std::array<double, 3> gamma{1.6, 2.2, 3.0};
  std::array<double, 3> noise_sigma{5.0, 13.0, 20.0};
  std::array<double, 3> occlusion_area{0.08, 0.15, 0.25};
  NoiseMode noise_mode = NoiseMode::PerChannel;

  void validate() const {
    for (int k : blur_kernel) {
      if (k < 1) throw std::invalid_argument("blur kernel length must be >= 1");
    }
    for (double g : gamma) {
      if (!(g > 0.0)) throw std::invalid_argument("gamma must be > 0");
    }
    for (double s : noise_sigma) {
      if (!(s >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
    }
    for (double f : occlusion_area) {
      if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("occlusion area must be in (0, 1]");
    }
  }
};

struct OcclusionRect {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;

  long long area() const { return static_cast<long long>(w) * h; }
  bool contains(int x, int y) const { return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h; }
  bool operator==(const OcclusionRect&) const = default;
};

inline std::uint8_t round_clamp_u8(double v) {
  const double r = std::floor(v + 0.5);
  if (r <= 0.0) return 0;
  if (r >= 255.0) return 255;
  return static_cast<std::uint8_t>(r);
}

/// 1-by-k box filter along rows with replicate-edge padding; the centre tap
/// sits at index k/2. Integer arithmetic, rounded half-up.
inline Image horizontal_blur(const Image& img, int k) {
  if (k < 1) throw std::invalid_argument("blur kernel length must be >= 1");
  Image out(img.width, img.height);
  const int left = k / 2;
  const int w = img.width;
  std::vector<int> padded(static_cast<std::size_t>(w + k - 1));
  for (int y = 0; y < img.height; ++y) {
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < w + k - 1; ++i) {
        const int x = std::clamp(i - left, 0, w - 1);
        padded[i] = img.at(x, y, c);
      }
      int sum = 0;
      for (int i = 0; i < k; ++i) sum += padded[i];
      for (int x = 0; x < w; ++x) {
        out.at(x, y, c) = static_cast<std::uint8_t>((2 * sum + k) / (2 * k));
        if (x + 1 < w) sum += padded[x + k] - padded[x];
      }
    }
  }
  return out;
}

inline Image motion_blur(const Image& img, int severity, const Params& params = {}) {
  check_severity(severity);
  return horizontal_blur(img, params.blur_kernel[severity - 1]);
}

/// 255 * (v / 255)^gamma for every 8-bit v, unrounded.
inline std::array<double, 256> gamma_curve(double gamma) {
  std::array<double, 256> lut{};
  for (int v = 0; v < 256; ++v) lut[v] = 255.0 * std::pow(v / 255.0, gamma);
  return lut;
}

/// Gamma darkening followed by additive zero-mean Gaussian noise, then
/// round half-up and clamp to [0, 255].
inline Image gamma_noise(const Image& img, double gamma, double sigma, std::uint64_t seed,
                         NoiseMode mode = NoiseMode::PerChannel) {
  const auto curve = gamma_curve(gamma);
  Image out(img.width, img.height);
  if (sigma == 0.0) {
    for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = round_clamp_u8(curve[img.data[i]]);
    return out;
  }
  SplitMix64 rng(seed);
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    double shared = mode == NoiseMode::SharedAcrossChannels ? rng.gaussian(sigma) : 0.0;
    for (int c = 0; c < 3; ++c) {
      const double n = mode == NoiseMode::PerChannel ? rng.gaussian(sigma) : shared;
      out.data[p * 3 + c] = round_clamp_u8(curve[img.data[p * 3 + c]] + n);
    }
  }
  return out;
}

inline Image low_light(const Image& img, int severity, std::uint64_t seed,
                       const Params& params = {}) {
  check_severity(severity);
  return gamma_noise(img, params.gamma[severity - 1], params.noise_sigma[severity - 1], seed,
                     params.noise_mode);
}

/// Samples a rectangle covering `fraction` of a width-by-height frame.
///
/// Draw order: aspect ratio w/h ~ U[0.5, 2.0], then x0, then y0, each
/// uniform over fully-inside placements.
inline OcclusionRect sample_occlusion_rect(int width, int height, double fraction,
                                           SplitMix64& rng) {
  const double area = fraction * width * height;
  const double aspect = rng.uniform(0.5, 2.0);
  int w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, width);
  int h = std::clamp(static_cast<int>(std::lround(area / w)), 1, height);
  if (h == height) w = std::clamp(static_cast<int>(std::lround(area / h)), 1, width);
  OcclusionRect r;
  r.w = w;
  r.h = h;
  r.x0 = static_cast<int>(rng.index_inclusive(width - w));
  r.y0 = static_cast<int>(rng.index_inclusive(height - h));
  return r;
}

struct OcclusionResult {
  Image image;
  OcclusionRect rect;
};

inline OcclusionResult occlude(const Image& img, int severity, std::uint64_t seed,
                               const Params& params = {}) {
  check_severity(severity);
  SplitMix64 rng(seed);
  const auto rect =
      sample_occlusion_rect(img.width, img.height, params.occlusion_area[severity - 1], rng);
  OcclusionResult res{img, rect};
  for (int y = rect.y0; y < rect.y0 + rect.h; ++y) {
    for (int x = rect.x0; x < rect.x0 + rect.w; ++x) {
      for (int c = 0; c < 3; ++c) res.image.at(x, y, c) = 0;
    }
  }
  return res;
}

inline Image corrupt(const Image& img, const CorruptionSpec& spec, const Params& params = {}) {
  spec.validate();
  switch (spec.kind) {
    case Kind::MotionBlur: return motion_blur(img, spec.severity, params);
    case Kind::LowLight: return low_light(img, spec.severity, spec.seed, params);
    case Kind::Occlusion: return occlude(img, spec.severity, spec.seed, params).image;
  }
  throw std::invalid_argument("CorruptionSpec: unknown kind");
}

/// Per-(image, condition) seed, independent of scheduling order.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view image_id,
                                 Kind kind, int severity) {
  std::uint64_t h = fnv1a_u64(global_seed, 0xCBF29CE484222325ULL);
  h = fnv1a(image_id, h);
  h = fnv1a(std::string_view("\0", 1), h);
  h = fnv1a_u64((static_cast<std::uint64_t>(kind) << 8) | static_cast<std::uint64_t>(severity), h);
  return mix64(h);
}

inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view image_id,
                                 const CorruptionSpec& spec) {
  return derive_seed(global_seed, image_id, spec.kind, spec.severity);
}

}  // namespace misbench::corruption
