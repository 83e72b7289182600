#pragma once

// Minimal fork-join helper.  Work is split into contiguous index chunks whose
// boundaries depend only on n (never on the worker count), and callers write
// results into per-index slots.  Any reduction happens afterwards, on the
// calling thread, in index order; that is what makes output independent of how
// many workers ran.

#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace levylab {

// Worker count used when a call does not pass one explicitly.
int default_workers();
void set_default_workers(int workers);

// Runs body(begin, end) over [0, n) in chunks of `grain`.  The first exception
// thrown by any chunk (lowest chunk index) is rethrown on the caller.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body, int workers = 0);

}  // namespace levylab
