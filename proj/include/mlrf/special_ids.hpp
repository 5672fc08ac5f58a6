#pragma once

namespace mlrf {

// Reserved vocabulary ids shared by every vocabulary and checkpoint.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

}  // namespace mlrf
