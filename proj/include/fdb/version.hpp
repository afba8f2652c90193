#pragma once

namespace fdb {

inline constexpr const char* kToolName = "fdb";
inline constexpr const char* kToolVersion = "1.0.0";

}  // namespace fdb
