// Copyright (c) 2026 moecalo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace moecalo {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kVersionString = "0.1.0";

}  // namespace moecalo
