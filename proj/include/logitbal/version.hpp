#pragma once

namespace logitbal {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace logitbal
