#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace dk::util {

inline int max_threads() {
    static const int n = [] {
        if (const char* env = std::getenv("DEFECTKIT_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }();
    return n;
}

// Splits [0, n) into contiguous blocks, one per worker. Each index is
// processed by exactly one thread, so results do not depend on the thread
// count as long as body(i) writes only outputs owned by index i.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
    const int threads = std::min<std::int64_t>(max_threads(), n);
    if (threads <= 1) {
        if (n > 0) body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    const std::int64_t chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace dk::util
