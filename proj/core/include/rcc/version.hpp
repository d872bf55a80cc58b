#pragma once

namespace rcc {

inline constexpr const char* kVersion = "rcc 0.1.0";

}  // namespace rcc
