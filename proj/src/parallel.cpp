#include "kb/parallel.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace kb {

namespace {
std::atomic<ExecMode> g_mode{ExecMode::openmp};
}

ExecMode exec_mode() { return g_mode.load(std::memory_order_relaxed); }

void set_exec_mode(ExecMode mode) { g_mode.store(mode, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace detail {

void parallel_for_impl(std::size_t n, void* ctx, void (*body)(void*, std::size_t)) {
#ifdef _OPENMP
  // nested calls run serially inside the caller's task; results are
  // index-addressed either way
  if (g_mode.load(std::memory_order_relaxed) == ExecMode::openmp && n > 1 &&
      !omp_in_parallel()) {
    const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1)
    for (long long i = 0; i < nn; ++i) {
      body(ctx, static_cast<std::size_t>(i));
    }
    return;
  }
#endif
  // serial reference path, kept for testing and as the fallback build
  for (std::size_t i = 0; i < n; ++i) body(ctx, i);
}

}  // namespace detail

}  // namespace kb
