#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace drm {

/// Execution policy for reductions over sample points.
///
/// Work is always cut into fixed-size chunks and partial results are combined in
/// chunk order, so the floating-point result does not depend on the thread count.
/// `threads == 1` runs everything on the calling thread.
struct Exec {
    int threads = 1;
    std::size_t chunk = 256;
};

inline std::size_t chunk_count(std::size_t n, const Exec& exec) {
    return exec.chunk == 0 ? 1 : (n + exec.chunk - 1) / exec.chunk;
}

/// Runs body(chunk_index, begin, end) over every chunk of [0, n).
inline void for_each_chunk(std::size_t n, const Exec& exec,
                           const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
    const std::size_t chunks = chunk_count(n, exec);
    const std::size_t step = exec.chunk == 0 ? n : exec.chunk;
    auto run = [&](std::size_t c) {
        const std::size_t begin = c * step;
        body(c, begin, std::min(n, begin + step));
    };
    const auto workers = static_cast<std::size_t>(std::max(1, exec.threads));
    if (workers == 1 || chunks < 2) {
        for (std::size_t c = 0; c < chunks; ++c) run(c);
        return;
    }
    const std::size_t used = std::min(workers, chunks);
    std::vector<std::exception_ptr> failures(used);
    {
        std::vector<std::jthread> pool;
        pool.reserve(used);
        for (std::size_t w = 0; w < used; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t c = w; c < chunks; c += used) run(c);
                } catch (...) {
                    failures[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& f : failures)
        if (f) std::rethrow_exception(f);
}

}  // namespace drm
