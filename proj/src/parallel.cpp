#include "dw/parallel.hpp"

#include <omp.h>

namespace dw {

namespace {
int g_threads = 0;
}

void set_thread_count(int n) {
  g_threads = n > 0 ? n : 0;
  omp_set_num_threads(g_threads > 0 ? g_threads : omp_get_num_procs());
}

int thread_count() { return g_threads > 0 ? g_threads : omp_get_max_threads(); }

namespace detail {

void run_chunks(std::int64_t chunk_count, void (*fn)(std::int64_t, void*), void* ctx) {
  const int threads = thread_count();
  if (threads <= 1 || chunk_count == 1) {
    for (std::int64_t i = 0; i < chunk_count; ++i) fn(i, ctx);
    return;
  }
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::int64_t i = 0; i < chunk_count; ++i) fn(i, ctx);
}

}  // namespace detail
}  // namespace dw
