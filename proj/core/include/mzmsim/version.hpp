#pragma once

namespace mzmsim {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kToolName = "mzmsim";

}  // namespace mzmsim
