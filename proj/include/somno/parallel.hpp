#pragma once

#include <cstddef>
#include <functional>

namespace somno {

// Worker count: SOMNOSCOPE_THREADS if set and positive, otherwise the
// hardware concurrency (at least 1).
std::size_t thread_count();

// Runs body(i) for i in [0, n) over up to thread_count() workers. Each index
// runs exactly once; results must be written to index-owned slots so the
// outcome does not depend on scheduling. The first exception is rethrown.
// Calls made from inside a worker run serially on that worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace somno
