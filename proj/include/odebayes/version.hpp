#pragma once

namespace odebayes {

#ifndef ODEBAYES_VERSION
#define ODEBAYES_VERSION "0.1.0"
#endif

inline constexpr const char* kVersion = ODEBAYES_VERSION;

} // namespace odebayes
