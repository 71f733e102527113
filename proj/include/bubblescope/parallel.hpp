#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace bubblescope {

/// Process-wide default worker count; scenarios set it from --workers.
inline int& default_workers()
{
    static int n = 1;
    return n;
}

/// Runs fn(i) for i in [0, n). Results must be written to per-index slots by fn,
/// so the outcome does not depend on the number of workers.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int workers = 0)
{
    if (workers <= 0) workers = default_workers();
    const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
    if (nw <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    pool.reserve(nw);
    for (std::size_t t = 0; t < nw; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

/// Pairwise sum of equally sized vectors in index order.
inline std::vector<double> pairwise_reduce(std::vector<std::vector<double>> parts, std::size_t width)
{
    if (parts.empty()) return std::vector<double>(width, 0.0);
    std::size_t n = parts.size();
    while (n > 1) {
        const std::size_t half = (n + 1) / 2;
        for (std::size_t i = 0; i < n / 2; ++i)
            for (std::size_t k = 0; k < width; ++k) parts[i][k] = parts[2 * i][k] + parts[2 * i + 1][k];
        if (n % 2 == 1) parts[half - 1] = std::move(parts[n - 1]);
        n = half;
    }
    return parts[0];
}

} // namespace bubblescope
