#pragma once

#include <cstddef>
#include <functional>

namespace densecount {

// Worker count for kernels that split independent outputs across threads.
// Initialized from DENSECOUNT_THREADS (0 or unset = hardware concurrency).
// Work partitioning never depends on this value, so results are identical
// for any thread count.
int num_threads();
void set_num_threads(int threads);

// Runs fn(i) for i in [0, count), distributing indices over num_threads().
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace densecount
