#pragma once

#include <cstddef>
#include <functional>

namespace deformreg {

// Worker count used by every parallel kernel. 0 or 1 means run inline.
void set_thread_count(int n);
int thread_count();

// Calls fn(i) for every i in [begin, end). Each index is handled by exactly
// one worker, so kernels that only write to slot i are deterministic no
// matter how many workers run.
void parallel_for(std::ptrdiff_t begin, std::ptrdiff_t end,
                  const std::function<void(std::ptrdiff_t)>& fn);

} // namespace deformreg
