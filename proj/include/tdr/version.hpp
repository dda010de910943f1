#pragma once

namespace tdr {

inline constexpr const char* version = "0.1.0";

}  // namespace tdr
