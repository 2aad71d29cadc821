#include "leansplat/threading.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace leansplat {

struct ThreadPool::Impl {
    std::vector<std::thread> workers;
    std::mutex mtx;
    std::condition_variable cv_job;
    std::condition_variable cv_done;

    // Current job. The claim cursor packs (job epoch << 32 | next block) so a
    // worker that is still draining an old job can never claim blocks, or
    // corrupt counters, of a newly posted one.
    const std::function<void(int64_t, int64_t)>* fn = nullptr;
    int64_t n = 0;
    int64_t grain = 1;
    int64_t n_blocks = 0;
    std::atomic<uint64_t> cursor{0};
    std::atomic<int64_t> blocks_done{0};
    uint64_t job_id = 0;
    bool shutting_down = false;

    void worker_loop() {
        uint64_t seen_job = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(mtx);
                cv_job.wait(lk, [&] { return shutting_down || job_id != seen_job; });
                if (shutting_down) return;
                seen_job = job_id;
            }
            run_blocks(seen_job);
        }
    }

    void run_blocks(uint64_t my_job) {
        const uint64_t epoch = my_job << 32;
        for (;;) {
            uint64_t cur = cursor.load();
            if ((cur & 0xffffffff00000000ull) != epoch) return;  // job changed
            const int64_t b = static_cast<int64_t>(cur & 0xffffffffull);
            if (b >= n_blocks) return;  // all blocks claimed
            if (!cursor.compare_exchange_weak(cur, cur + 1)) continue;
            const int64_t lo = b * grain;
            const int64_t hi = std::min(n, lo + grain);
            (*fn)(lo, hi);
            if (blocks_done.fetch_add(1) + 1 == n_blocks) {
                std::lock_guard<std::mutex> lk(mtx);
                cv_done.notify_all();
            }
        }
    }
};

ThreadPool::ThreadPool() : impl_(new Impl) {
    start(static_cast<int>(std::thread::hardware_concurrency()));
}

ThreadPool::~ThreadPool() {
    stop();
    delete impl_;
}

ThreadPool& ThreadPool::instance() {
    static ThreadPool pool;
    return pool;
}

void ThreadPool::start(int n) {
    if (n < 1) n = 1;
    n_threads_ = n;
    // The calling thread participates too, so spawn n-1 workers.
    for (int i = 0; i + 1 < n; ++i) {
        impl_->workers.emplace_back([this] { impl_->worker_loop(); });
    }
}

void ThreadPool::stop() {
    {
        std::lock_guard<std::mutex> lk(impl_->mtx);
        impl_->shutting_down = true;
        impl_->cv_job.notify_all();
    }
    for (auto& w : impl_->workers) w.join();
    impl_->workers.clear();
    impl_->shutting_down = false;
}

void ThreadPool::set_threads(int n) {
    if (n == n_threads_) return;
    stop();
    start(n);
}

namespace {
thread_local bool in_parallel_region = false;
}

void ThreadPool::parallel_for(int64_t n, int64_t grain,
                              const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    if (grain < 1) grain = 1;
    const int64_t n_blocks = (n + grain - 1) / grain;
    if (n_threads_ == 1 || n_blocks == 1 || in_parallel_region) {
        fn(0, n);
        return;
    }
    uint64_t job;
    {
        std::lock_guard<std::mutex> lk(impl_->mtx);
        // Close the cursor first: this fails any in-flight claim CAS from a
        // worker still draining the previous job, so the field writes below
        // cannot race with a stale claim.
        impl_->cursor.store(((impl_->job_id + 1) << 32) | 0xffffffffull);
        impl_->fn = &fn;
        impl_->n = n;
        impl_->grain = grain;
        impl_->n_blocks = n_blocks;
        impl_->blocks_done.store(0);
        job = ++impl_->job_id;
        impl_->cursor.store(job << 32);  // open claims for the new epoch
        impl_->cv_job.notify_all();
    }

    in_parallel_region = true;
    impl_->run_blocks(job);
    in_parallel_region = false;

    std::unique_lock<std::mutex> lk(impl_->mtx);
    impl_->cv_done.wait(lk, [&] { return impl_->blocks_done.load() == impl_->n_blocks; });
    impl_->fn = nullptr;
}

void ThreadPool::parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    // Grain depends only on n, keeping block boundaries thread-count invariant.
    const int64_t grain = std::max<int64_t>(2048, (n + 63) / 64);
    parallel_for(n, grain, fn);
}

}  // namespace leansplat
