#pragma once

namespace rfgap {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr unsigned kModelFormatVersion = 1;

} // namespace rfgap
