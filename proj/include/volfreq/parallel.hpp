#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace volfreq {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Work items must be
/// independent; results stay deterministic when each writes its own slot.
/// The exception of the lowest failing index is rethrown.
template <typename F>
void parallel_for(std::size_t n, int workers, F&& fn) {
  const std::size_t threads = std::min(static_cast<std::size_t>(std::max(workers, 1)), std::max<std::size_t>(n, 1));
  std::vector<std::exception_ptr> errors(n);
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
            failed = true;
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace volfreq
