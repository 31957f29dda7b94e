// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "misbench/constants.hpp"

namespace misbench {

/// Set of class ids in [0, kNumClasses), stored as a bitmask.
class ClassSet {
 public:
  constexpr ClassSet() = default;
  ClassSet(std::initializer_list<int> ids) {
    for (int id : ids) insert(id);
  }

  static constexpr ClassSet from_mask(std::uint32_t mask) {
    ClassSet s;
    s.bits_ = mask & kFullMask;
    return s;
  }
  static constexpr ClassSet all() { return from_mask(kFullMask); }

  void insert(int id) {
    check(id);
    bits_ |= 1u << id;
  }
  void erase(int id) {
    check(id);
    bits_ &= ~(1u << id);
  }
  constexpr bool contains(int id) const {
    return id >= 0 && id < kNumClasses && (bits_ >> id) & 1u;
  }

  constexpr int size() const { return std::popcount(bits_); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint32_t mask() const { return bits_; }

  constexpr ClassSet operator|(ClassSet o) const { return from_mask(bits_ | o.bits_); }
  constexpr ClassSet operator&(ClassSet o) const { return from_mask(bits_ & o.bits_); }
  /// Set difference.
  constexpr ClassSet operator-(ClassSet o) const { return from_mask(bits_ & ~o.bits_); }
  ClassSet& operator|=(ClassSet o) {
    bits_ |= o.bits_;
    return *this;
  }

  constexpr bool is_subset_of(ClassSet o) const { return (bits_ & ~o.bits_) == 0; }

  std::vector<int> members() const {
    std::vector<int> out;
    for (int c = 0; c < kNumClasses; ++c)
      if (contains(c)) out.push_back(c);
    return out;
  }

  constexpr bool operator==(const ClassSet&) const = default;

 private:
  static constexpr std::uint32_t kFullMask = (1u << kNumClasses) - 1;

  static void check(int id) {
    if (id < 0 || id >= kNumClasses) {
      throw std::out_of_range("class id " + std::to_string(id) + " outside [0, " +
                              std::to_string(kNumClasses) + ")");
    }
  }

  std::uint32_t bits_ = 0;
};

}  // namespace misbench
