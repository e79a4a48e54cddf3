#pragma once

#include <functional>

namespace sacvit {

// Worker count for batch fan-out: SACVIT_THREADS caps it, 0 or unset means
// hardware concurrency.
int worker_count();

// Runs fn(i) for i in [0, count) across workers. Callers index into
// preallocated result slots, so output ordering matches input ordering.
void parallel_for(int count, const std::function<void(int)>& fn);

} // namespace sacvit
