#pragma once

#include <cstddef>
#include <functional>

namespace msinfer {

/// Global cap on worker threads (the CLI's --threads). 0 means hardware concurrency.
void set_max_threads(unsigned n) noexcept;
[[nodiscard]] unsigned max_threads() noexcept;

/// Runs body(i) for i in [0, n). Work items must write only to their own
/// output slot; results are then independent of the thread count. If any
/// item throws, the exception from the lowest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace msinfer
