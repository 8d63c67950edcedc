#pragma once

#include <cstddef>
#include <functional>

namespace noisebench {

// Global worker-pool size. 0 means hardware_concurrency. Set once by the CLI
// from --threads / NOISEBENCH_THREADS; library callers may pass an explicit
// count instead.
void set_default_threads(int n);
int default_threads();

// Runs fn(begin, end) over a static partition of [begin, end) across
// `threads` workers (0 = default). Every result written by fn must depend
// only on the index, never on the partition, so outputs are identical for
// any worker count.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t, std::size_t)>& fn,
                  int threads = 0);

}  // namespace noisebench
