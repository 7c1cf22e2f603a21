#pragma once

namespace csegnet {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace csegnet
