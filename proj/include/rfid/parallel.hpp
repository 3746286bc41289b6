#pragma once

#include <cstddef>
#include <functional>

namespace rfid {

/// Worker cap shared by every parallel loop. Defaults to RFID_THREADS when
/// set, otherwise the hardware concurrency.
int thread_count();
void set_thread_count(int n);  // n <= 0 restores the default

/// Calls `body(i)` for i in [0, n). Iterations must be independent; callers
/// write results into preallocated slots so the output order is fixed.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace rfid
