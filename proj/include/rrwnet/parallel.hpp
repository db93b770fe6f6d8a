#pragma once

#include <cstddef>
#include <functional>

namespace rrwnet {

// Worker cap from RRWNET_THREADS (defaults to the hardware concurrency).
std::size_t worker_threads();

// Runs fn(i) for i in [0,n) on up to worker_threads() threads. fn must not
// share mutable state across indices. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace rrwnet
