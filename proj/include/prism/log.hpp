#pragma once

// Process-wide logger on stderr. Verbosity comes from PRISM_LOG
// (trace, debug, info, warn, error, off); default warn.

#include <memory>

#include <spdlog/spdlog.h>

namespace prism {

spdlog::logger& log();

}  // namespace prism
