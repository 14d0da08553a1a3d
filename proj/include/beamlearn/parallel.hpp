#pragma once

#include <cstddef>
#include <functional>

namespace beamlearn {

/// Worker count used by parallel_for. BEAMLEARN_THREADS, when set to a
/// positive integer, overrides whatever set_thread_count chose.
std::size_t thread_count();
/// 0 selects the number of available cores.
void set_thread_count(std::size_t n);

/// Calls fn(i) for i in [0, n) over contiguous static chunks. Each index is
/// handled exactly once, so per-index results do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace beamlearn
