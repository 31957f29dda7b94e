// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include <fmt/format.h>

namespace misbench::detail {

/// Shortest representation that parses back to the same double.
inline std::string full(double v) { return fmt::format("{}", v); }
inline std::string full(const std::optional<double>& v) { return v ? full(*v) : std::string(); }

/// Two decimals, as in condition-level summary tables.
inline std::string two_dp(double v) {
  auto s = fmt::format("{:.2f}", v);
  return s == "-0.00" ? "0.00" : s;
}
inline std::string two_dp(const std::optional<double>& v) { return v ? two_dp(*v) : std::string(); }

/// Integer percent, rounded half up.
inline std::string percent(double v) {
  return fmt::format("{}", static_cast<long long>(std::floor(v * 100.0 + 0.5)));
}
inline std::string percent(const std::optional<double>& v) { return v ? percent(*v) : std::string(); }

inline std::optional<double> parse_optional_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

}  // namespace misbench::detail
