#pragma once

namespace varigrad {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace varigrad
