#pragma once

#include <cstdint>
#include <functional>

namespace leansplat {

// Fixed-size worker pool. Work is split into blocks whose boundaries depend
// only on the problem size (never on the worker count), so every kernel
// produces bit-identical results for any --threads setting.
class ThreadPool {
public:
    static ThreadPool& instance();

    // Recreates the workers. Not safe while jobs are in flight.
    void set_threads(int n);
    int threads() const { return n_threads_; }

    // Runs fn(begin, end) over [0, n) split into blocks of `grain` elements.
    // Blocks are disjoint, so fn may write to per-index outputs freely.
    void parallel_for(int64_t n, int64_t grain,
                      const std::function<void(int64_t, int64_t)>& fn);

    // Convenience: one block per worker-sized stripe with a minimum grain.
    void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

    ~ThreadPool();

private:
    ThreadPool();
    void start(int n);
    void stop();

    struct Impl;
    Impl* impl_;
    int n_threads_ = 1;
};

inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    ThreadPool::instance().parallel_for(n, fn);
}

inline void parallel_for_grain(int64_t n, int64_t grain,
                               const std::function<void(int64_t, int64_t)>& fn) {
    ThreadPool::instance().parallel_for(n, grain, fn);
}

}  // namespace leansplat
