// Copyright 2026 The pprt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>

namespace pprt {

/// Virtual (or wall) time in milliseconds.
using TimeMs = std::int64_t;

inline constexpr TimeMs kSecondMs = 1000;
inline constexpr TimeMs kHourMs = 3600 * kSecondMs;
inline constexpr TimeMs kDayMs = 24 * kHourMs;

constexpr std::int64_t day_of(TimeMs t) { return t >= 0 ? t / kDayMs : -((-t + kDayMs - 1) / kDayMs); }
constexpr TimeMs next_midnight(TimeMs t) { return (day_of(t) + 1) * kDayMs; }

}  // namespace pprt
