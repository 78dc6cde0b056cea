#pragma once

#include <cstddef>
#include <functional>

namespace hvt {

/// Worker count from the HVT_THREADS environment variable (default 1, minimum 1).
std::size_t worker_count();

/// Calls fn(i) for i in [0, n) on up to `workers` threads. Work is split into
/// contiguous ranges, so results written to per-index slots do not depend on the
/// worker count. The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

} // namespace hvt
