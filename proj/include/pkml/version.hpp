#pragma once

namespace pkml {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace pkml
