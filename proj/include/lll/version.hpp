#pragma once

namespace lll {
inline constexpr const char* kVersion = "0.1.0";
}
