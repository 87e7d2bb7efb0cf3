#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

namespace mfgstop {

/// Runs fn(i) for i in [0, n) on up to `threads` workers and returns the
/// results in index order. The first exception (by index) is rethrown.
template <typename R, typename Fn>
std::vector<R> parallel_map(std::size_t n, int threads, Fn&& fn) {
    std::vector<std::optional<R>> out(n);
    std::vector<std::exception_ptr> errors(n);
    const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, std::max<std::size_t>(n, 1));
    auto run = [&](std::size_t w) {
        for (std::size_t i = w; i < n; i += workers) {
            try {
                out[i].emplace(fn(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        run(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
        for (auto& t : pool) t.join();
    }
    std::vector<R> result;
    result.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (errors[i]) std::rethrow_exception(errors[i]);
        result.push_back(std::move(*out[i]));
    }
    return result;
}

}  // namespace mfgstop
