#pragma once

namespace qpburst {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kEventSchemaVersion = 1;

}  // namespace qpburst
