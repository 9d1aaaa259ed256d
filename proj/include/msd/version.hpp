#pragma once

namespace msd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace msd
