#pragma once

#include <cstddef>
#include <functional>

namespace obf::parallel {

/// Trials are always cut into blocks of this size, whatever the worker count,
/// so per-block partial results and their reduction order never change.
inline constexpr std::size_t kBlockSize = 2048;

void set_worker_count(unsigned workers);
unsigned worker_count();

std::size_t block_count(std::size_t total);

/// Runs fn(block, begin, end) for every block of [0, total). Blocks may run
/// concurrently and in any order; fn must only write block-local state.
void for_each_block(std::size_t total,
                    const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

/// Runs fn(i) for i in [0, count) on the worker pool.
void for_each_index(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace obf::parallel
