#pragma once

#include <cstdint>
#include <functional>

namespace mdeh {

/// Thread cap: min(hardware, MDE_HARDEN_THREADS). At least 1.
int max_threads();

/// Runs fn(i) for i in [0, n). Work items must be independent; callers that
/// aggregate must store per-index results and reduce in index order so the
/// outcome is invariant to the thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace mdeh
