// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace misbench::stats {

/// Thrown when a coefficient is undefined (constant series or n < 3).
struct UndefinedCorrelation : std::domain_error {
  using std::domain_error::domain_error;
};

struct PairedSeries {
  std::vector<std::string> labels;
  std::vector<double> q;
  std::vector<double> l;

  void validate() const {
    if (q.size() != l.size() || labels.size() != q.size()) {
      throw std::invalid_argument("PairedSeries: labels/q/l lengths differ (" +
                                  std::to_string(labels.size()) + "/" + std::to_string(q.size()) +
                                  "/" + std::to_string(l.size()) + ")");
    }
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (!std::isfinite(q[i]) || !std::isfinite(l[i])) {
        throw std::invalid_argument("PairedSeries: non-finite value at '" + labels[i] + "'");
      }
    }
  }
};

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  const auto n = x.size();
  if (n < 3) throw UndefinedCorrelation("undefined correlation: need at least 3 points");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y)) throw UndefinedCorrelation("undefined correlation: constant series");
  // Two-pass in extended precision: exact linear relations such as
  // L = 1 - Q come out as exactly +/-1 after rounding to double.
  long double mx = 0.0L, my = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<long double>(n);
  my /= static_cast<long double>(n);
  long double sxy = 0.0L, sxx = 0.0L, syy = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    const long double dx = x[i] - mx;
    const long double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(static_cast<double>(sxy / std::sqrt(sxx * syy)), -1.0, 1.0);
}

/// 1-based ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

inline double pearson(const PairedSeries& s) {
  s.validate();
  return pearson(s.q, s.l);
}

inline double spearman(const PairedSeries& s) {
  s.validate();
  return spearman(s.q, s.l);
}

/// One row of a condition-level metric table. Absent metrics are skipped
/// pairwise when correlating.
struct MetricRow {
  std::string label;
  std::map<std::string, double> values;
};

struct CorrelationCell {
  std::string q_metric;
  std::string l_metric;
  std::optional<double> pearson;
  std::optional<double> spearman;
  std::size_t n = 0;
  std::string note;  // empty when both coefficients are defined
};

struct ScatterPoint {
  std::string q_metric;
  std::string l_metric;
  std::string label;
  double q = 0.0;
  double l = 0.0;
};

struct CorrelationResult {
  std::vector<CorrelationCell> cells;
  std::vector<ScatterPoint> scatter;
};

/// Both coefficients for every (Q, L) metric pair. A cell whose series is
/// constant is flagged undefined; other cells are unaffected. Throws when a
/// pair has fewer than 3 rows carrying both values.
inline CorrelationResult correlate_conditions(const std::vector<MetricRow>& table,
                                              const std::vector<std::string>& q_metrics,
                                              const std::vector<std::string>& l_metrics) {
  CorrelationResult out;
  std::vector<std::string> missing;
  for (const auto& qm : q_metrics) {
    for (const auto& lm : l_metrics) {
      PairedSeries s;
      for (const auto& row : table) {
        auto qi = row.values.find(qm);
        auto li = row.values.find(lm);
        if (qi == row.values.end() || li == row.values.end()) continue;
        s.labels.push_back(row.label);
        s.q.push_back(qi->second);
        s.l.push_back(li->second);
      }
      if (s.q.size() < 3) {
        missing.push_back(qm + " x " + lm + " (" + std::to_string(s.q.size()) + " rows)");
        continue;
      }
      s.validate();
      CorrelationCell cell{qm, lm, std::nullopt, std::nullopt, s.q.size(), {}};
      try {
        cell.pearson = pearson(s.q, s.l);
      } catch (const UndefinedCorrelation& e) {
        cell.note = e.what();
      }
      try {
        cell.spearman = spearman(s.q, s.l);
      } catch (const UndefinedCorrelation& e) {
        cell.note = e.what();
      }
      out.cells.push_back(cell);
      for (std::size_t i = 0; i < s.q.size(); ++i)
        out.scatter.push_back({qm, lm, s.labels[i], s.q[i], s.l[i]});
    }
  }
  if (!missing.empty()) {
    std::string msg = "correlate_conditions: need at least 3 rows with both values for:";
    for (const auto& m : missing) msg += " " + m + ";";
    throw std::invalid_argument(msg);
  }
  return out;
}

}  // namespace misbench::stats
