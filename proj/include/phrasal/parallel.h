#pragma once

#include <cstddef>
#include <functional>

namespace phrasal {

// Worker cap from PHRASAL_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_threads();

/// Runs fn(shard) for shard in [0, shards). Work is split into a fixed number
/// of shards so that merged results do not depend on the thread count.
void parallel_shards(std::size_t shards, const std::function<void(std::size_t)>& fn);

// [begin, end) of `shard` when `n` items are split into `shards` contiguous blocks.
inline std::size_t shard_begin(std::size_t n, std::size_t shards, std::size_t shard) {
  return n * shard / shards;
}

}  // namespace phrasal
