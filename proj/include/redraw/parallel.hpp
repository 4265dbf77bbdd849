#pragma once

#include <cstdint>
#include <functional>

namespace redraw::par {

// Global worker count for data-parallel loops. 1 = fully serial.
void set_threads(int n);
int threads();

// Runs fn over disjoint chunks of [begin,end). Work is partitioned
// statically, so results are identical for any thread count as long as
// chunks only touch disjoint outputs. Exceptions from workers are
// rethrown on the calling thread.
void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int64_t)>& fn);

}  // namespace redraw::par
