// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace misbench {

/// Evaluation classes in the trainId encoding.
inline constexpr int kNumClasses = 19;
inline constexpr std::uint8_t kIgnoreLabel = 255;

}  // namespace misbench
