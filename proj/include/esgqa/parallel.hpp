#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace esgqa {

/// Runs fn(i) for i in [0, n) on up to `parallelism` threads. Results are
/// stored by index, so output order never depends on scheduling. The first
/// exception thrown by any task is rethrown after all workers stop.
template <typename T>
std::vector<T> parallel_map(std::size_t n, std::size_t parallelism, const std::function<T(std::size_t)>& fn)
{
    std::vector<T> out(n);
    if (n == 0) return out;
    const std::size_t workers = std::clamp<std::size_t>(parallelism, 1, n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    out[i] = fn(i);
                } catch (...) {
                    std::lock_guard lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

} // namespace esgqa
