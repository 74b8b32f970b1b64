#include "migc/threadpool.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "migc/tensor.hpp"

namespace migc {

void run_indexed_jobs(int n, int workers, const std::function<void(int)>& fn) {
  if (n < 0) throw ConfigError("job count must be non-negative");
  if (workers < 1) throw ConfigError("worker count must be positive");
  if (n == 0) return;

  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }

  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr first_err;
  int first_err_index = n;

  auto body = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (i < first_err_index) {
          first_err_index = i;
          first_err = std::current_exception();
        }
      }
    }
  };

  std::vector<std::thread> threads;
  const int t = std::min(workers, n);
  threads.reserve(static_cast<size_t>(t));
  for (int k = 0; k < t; ++k) threads.emplace_back(body);
  for (auto& th : threads) th.join();
  if (first_err) std::rethrow_exception(first_err);
}

}  // namespace migc
