#pragma once

#include <cstddef>
#include <memory>
#include <type_traits>

namespace kb {

enum class ExecMode { serial, openmp };

// Process-wide execution mode for the data-parallel kernels. Both modes
// produce bit-identical results: work is split into index-addressed tasks
// whose outputs are combined in index order.
ExecMode exec_mode();
void set_exec_mode(ExecMode mode);
int max_threads();

namespace detail {
void parallel_for_impl(std::size_t n, void* ctx, void (*body)(void*, std::size_t));
}

// f(i) must write only to slots owned by index i.
template <typename F>
void parallel_for(std::size_t n, F&& f) {
  using Fn = std::remove_reference_t<F>;
  auto thunk = [](void* ctx, std::size_t i) { (*static_cast<Fn*>(ctx))(i); };
  detail::parallel_for_impl(
      n, const_cast<void*>(static_cast<const void*>(std::addressof(f))), thunk);
}

}  // namespace kb
