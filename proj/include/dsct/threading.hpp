#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace dsct {

// Resolves a requested worker count: 0 means "use hardware concurrency".
inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(begin, end) over [0, n) split into contiguous ranges, one per worker.
// Ranges are disjoint, so this is safe whenever fn writes only inside its range.
inline void parallel_for_ranges(std::int64_t n, int threads,
                                const std::function<void(std::int64_t, std::int64_t)>& fn) {
    threads = std::min<std::int64_t>(resolve_threads(threads), std::max<std::int64_t>(n, 1));
    if (n <= 0) return;
    if (threads <= 1) {
        fn(0, n);
        return;
    }
    const std::int64_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) {
        const std::int64_t begin = t * chunk;
        const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
        if (begin >= end) break;
        pool.emplace_back(fn, begin, end);
    }
    for (auto& th : pool) th.join();
}

// Runs fn(i) for i in [0, n) on a pool of workers grabbing fixed-size task
// indices. Task identity does not depend on the worker count, so any
// per-task output is reproducible across thread counts.
inline void parallel_for_tasks(std::int64_t n, int threads, const std::function<void(std::int64_t)>& fn) {
    threads = std::min<std::int64_t>(resolve_threads(threads), std::max<std::int64_t>(n, 1));
    if (n <= 0) return;
    if (threads <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t]() {
            for (std::int64_t i = t; i < n; i += threads) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace dsct
