// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "misbench/class_set.hpp"
#include "misbench/detail/csv.hpp"
#include "misbench/detail/files.hpp"
#include "misbench/label_map.hpp"

namespace misbench::dataset {

namespace fs = std::filesystem;

/// Cityscapes trainId order.
inline const std::array<std::string, kNumClasses>& cityscapes_class_names() {
  static const std::array<std::string, kNumClasses> names{
      "road",  "sidewalk", "building", "wall",  "fence",      "pole",    "traffic light",
      "traffic sign", "vegetation", "terrain", "sky", "person", "rider", "car",
      "truck", "bus", "train", "motorcycle", "bicycle"};
  return names;
}

namespace cls {
inline constexpr int kRoad = 0, kSidewalk = 1, kBuilding = 2, kWall = 3, kFence = 4, kPole = 5,
                     kTrafficLight = 6, kTrafficSign = 7, kVegetation = 8, kTerrain = 9,
                     kSky = 10, kPerson = 11, kRider = 12, kCar = 13, kTruck = 14, kBus = 15,
                     kTrain = 16, kMotorcycle = 17, kBicycle = 18;
}  // namespace cls

struct ClassTaxonomy {
  std::vector<std::string> names;
  ClassSet critical;

  static ClassTaxonomy cityscapes() {
    const auto& n = cityscapes_class_names();
    return {{n.begin(), n.end()},
            ClassSet{cls::kPerson, cls::kRider, cls::kTrafficLight, cls::kTrafficSign,
                     cls::kBicycle}};
  }

  std::optional<int> id_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return std::nullopt;
  }

  const std::string& name(int id) const {
    if (id < 0 || id >= static_cast<int>(names.size())) {
      throw std::out_of_range("class id " + std::to_string(id) + " outside taxonomy");
    }
    return names[id];
  }

  void validate() const {
    if (names.size() != kNumClasses) {
      throw std::invalid_argument("taxonomy must list exactly " + std::to_string(kNumClasses) +
                                  " classes, got " + std::to_string(names.size()));
    }
    std::set<std::string> seen;
    for (const auto& n : names) {
      if (n.empty()) throw std::invalid_argument("taxonomy: empty class name");
      if (!seen.insert(n).second) throw std::invalid_argument("taxonomy: duplicate class '" + n + "'");
    }
  }

  /// {"names": [...19], "critical": [names]}
  static ClassTaxonomy from_json(const nlohmann::json& j) {
    ClassTaxonomy t;
    t.names = j.at("names").get<std::vector<std::string>>();
    t.validate();
    for (const auto& c : j.value("critical", std::vector<std::string>{})) {
      const auto id = t.id_of(c);
      if (!id) throw std::invalid_argument("taxonomy: critical class '" + c + "' not in names");
      t.critical.insert(*id);
    }
    return t;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["names"] = names;
    std::vector<std::string> crit;
    for (int c : critical.members()) crit.push_back(names[c]);
    j["critical"] = crit;
    return j;
  }
};

/// Classes with at least `min_pixels` pixels; ignore excluded.
inline ClassSet gt_class_set(const LabelMap& gt, std::uint64_t min_pixels = 1) {
  std::array<std::uint64_t, kNumClasses> counts{};
  for (auto v : gt.labels)
    if (v < kNumClasses) ++counts[v];
  ClassSet out;
  const auto threshold = std::max<std::uint64_t>(min_pixels, 1);
  for (int c = 0; c < kNumClasses; ++c)
    if (counts[c] >= threshold) out.insert(c);
  return out;
}

inline ClassSet critical_present(ClassSet gt_set, const ClassTaxonomy& taxonomy) {
  return gt_set & taxonomy.critical;
}

enum class SafetyLabel { Safe, Unsafe };

inline std::string_view to_string(SafetyLabel l) { return l == SafetyLabel::Safe ? "safe" : "unsafe"; }

inline std::optional<SafetyLabel> parse_safety_label(std::string_view s) {
  std::string lower;
  for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "safe") return SafetyLabel::Safe;
  if (lower == "unsafe") return SafetyLabel::Unsafe;
  return std::nullopt;
}

struct SampleEntry {
  std::string image_id;
  fs::path image_path;
  fs::path gt_path;
  SafetyLabel safety_label = SafetyLabel::Safe;
};

/// Reads `image_id,image_path,gt_path,safety_label`. Relative paths resolve
/// against the manifest's directory. Row order is preserved.
inline std::vector<SampleEntry> load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("manifest '" + path.string() + "' not found");
  const auto source = path.string();
  const auto table = detail::parse_csv(detail::read_file(path), source);
  const int c_id = table.require_column("image_id", source);
  const int c_img = table.require_column("image_path", source);
  const int c_gt = table.require_column("gt_path", source);
  const int c_lbl = table.require_column("safety_label", source);
  const auto base = path.parent_path();

  std::vector<SampleEntry> out;
  std::set<std::string> ids;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto where = source + ":" + std::to_string(table.line_numbers[r]);
    SampleEntry e;
    e.image_id = row[c_id];
    if (e.image_id.empty()) throw std::runtime_error(where + ": empty image_id");
    if (e.image_id.find_first_of("/\\") != std::string::npos) {
      throw std::runtime_error(where + ": image_id '" + e.image_id + "' contains a path separator");
    }
    if (!ids.insert(e.image_id).second) {
      throw std::runtime_error(where + ": duplicate image_id '" + e.image_id + "'");
    }
    const auto label = parse_safety_label(row[c_lbl]);
    if (!label) {
      throw std::runtime_error(where + ": safety_label '" + row[c_lbl] +
                               "' is not 'safe' or 'unsafe'");
    }
    e.safety_label = *label;
    e.image_path = detail::resolve(base, row[c_img]);
    e.gt_path = detail::resolve(base, row[c_gt]);
    if (!fs::exists(e.image_path)) {
      throw std::runtime_error(where + ": image file '" + e.image_path.string() + "' not found");
    }
    if (!fs::exists(e.gt_path)) {
      throw std::runtime_error(where + ": ground-truth file '" + e.gt_path.string() + "' not found");
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace misbench::dataset
