#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace protofl {

// Runs f(i) for i in [0, n) on up to `threads` workers and joins. If any
// task throws, the exception of the lowest failing index is rethrown after
// all workers finish, so error reporting does not depend on scheduling.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    const std::size_t workers = threads < n ? threads : n;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            f(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace protofl
