#include "levylab/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>

namespace levylab {

namespace {

int initial_workers() {
  if (const char* env = std::getenv("LEVYLAB_WORKERS")) {
    const int w = std::atoi(env);
    if (w > 0) return w;
  }
  return 1;
}

std::atomic<int>& workers_slot() {
  static std::atomic<int> w{initial_workers()};
  return w;
}

}  // namespace

int default_workers() { return workers_slot().load(); }

void set_default_workers(int workers) { workers_slot().store(std::max(1, workers)); }

void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body, int workers) {
  if (n == 0) return;
  if (grain == 0) grain = 1;
  if (workers <= 0) workers = default_workers();
  const std::size_t chunks = (n + grain - 1) / grain;
  const auto threads = static_cast<std::size_t>(std::min<std::size_t>(workers, chunks));
  if (threads <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) body(c * grain, std::min(n, (c + 1) * grain));
    return;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(chunks);
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks) return;
      try {
        body(c * grain, std::min(n, (c + 1) * grain));
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace levylab
