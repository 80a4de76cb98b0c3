#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace dw {

// Caps the worker count used by every parallel loop in the library.
// n <= 0 restores the runtime default.
void set_thread_count(int n);
int thread_count();

namespace detail {
void run_chunks(std::int64_t chunk_count, void (*fn)(std::int64_t, void*), void* ctx);
}

// Runs fn(i) for i in [begin, end). Iterations must write disjoint outputs.
template <typename F>
void parallel_for(std::int64_t begin, std::int64_t end, F&& fn) {
  if (end <= begin) return;
  struct Ctx {
    F* fn;
    std::int64_t begin;
  } ctx{&fn, begin};
  detail::run_chunks(
      end - begin,
      [](std::int64_t i, void* p) {
        auto* c = static_cast<Ctx*>(p);
        (*c->fn)(c->begin + i);
      },
      &ctx);
}

// Sums fn(i) over [0, n) in fixed-size blocks whose partials are combined in
// block order, so the result does not depend on the thread count.
template <typename F>
double deterministic_sum(std::int64_t n, F&& fn, std::int64_t block = 4096) {
  if (n <= 0) return 0.0;
  const std::int64_t blocks = (n + block - 1) / block;
  std::vector<double> partial(static_cast<std::size_t>(blocks), 0.0);
  parallel_for(0, blocks, [&](std::int64_t b) {
    double s = 0.0;
    const std::int64_t hi = std::min(n, (b + 1) * block);
    for (std::int64_t i = b * block; i < hi; ++i) s += fn(i);
    partial[static_cast<std::size_t>(b)] = s;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace dw
