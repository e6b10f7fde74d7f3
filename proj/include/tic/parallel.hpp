#pragma once

#include <cstddef>
#include <functional>

namespace tic {

// Worker count used by parallel_for; 0 selects hardware concurrency.
void set_thread_count(std::size_t n);
std::size_t thread_count();

// Runs fn(begin, end) over a static partition of [0, n). Each index is
// handled by exactly one call, so callers that write results by index get
// output independent of the worker count. Exceptions are rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace tic
