#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

namespace mbp {

/// Worker count from MBPLAB_WORKERS, else 1.
unsigned default_worker_count();

/// Fixed-size pool that maps a function over trajectory indices.
///
/// Work items are claimed in chunks from a shared counter, so scheduling is
/// nondeterministic; callers store per-index results and reduce them in index
/// order, which makes every estimate independent of the worker count.
class WorkerPool {
public:
    explicit WorkerPool(unsigned workers = 1) : workers_(std::max(1u, workers)) {}

    unsigned size() const noexcept { return workers_; }

    /// Calls fn(i) for every i in [0, n). If any call throws, the exception
    /// from the lowest failing index is rethrown after all workers stop.
    template <class Fn>
    void for_each_index(std::size_t n, Fn&& fn) const {
        if (n == 0) return;
        if (workers_ == 1 || n == 1) {
            for (std::size_t i = 0; i < n; ++i) fn(i);
            return;
        }
        constexpr std::size_t kChunk = 64;
        std::atomic<std::size_t> next{0};
        std::atomic<bool> failed{false};
        std::mutex error_mutex;
        std::size_t error_index = std::numeric_limits<std::size_t>::max();
        std::exception_ptr error;

        auto worker = [&] {
            while (!failed.load(std::memory_order_relaxed)) {
                const std::size_t begin = next.fetch_add(kChunk);
                if (begin >= n) break;
                const std::size_t end = std::min(n, begin + kChunk);
                for (std::size_t i = begin; i < end; ++i) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (i < error_index) {
                            error_index = i;
                            error = std::current_exception();
                        }
                        failed = true;
                        break;
                    }
                }
            }
        };

        std::vector<std::jthread> threads;
        const unsigned spawn = static_cast<unsigned>(std::min<std::size_t>(workers_, n));
        threads.reserve(spawn);
        for (unsigned w = 0; w < spawn; ++w) threads.emplace_back(worker);
        threads.clear();
        if (error) std::rethrow_exception(error);
    }

    /// Maps fn over [0, n) into a vector indexed by trajectory.
    template <class T, class Fn>
    std::vector<T> map(std::size_t n, Fn&& fn) const {
        std::vector<T> out(n);
        for_each_index(n, [&](std::size_t i) { out[i] = fn(i); });
        return out;
    }

private:
    unsigned workers_;
};

}  // namespace mbp
