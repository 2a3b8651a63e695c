#pragma once

#include <cstddef>
#include <functional>

namespace tmae {

/// Upper bound on worker threads used inside tensor kernels. Defaults to 1.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs fn(begin, end) over [0, n) split into contiguous chunks.
///
/// The partition depends only on n and the thread count, and every chunk
/// writes disjoint outputs, so results are reproducible for a fixed count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace tmae
