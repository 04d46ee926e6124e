#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace lcmfuse {

// Work is always split into kShards fixed shards, independent of how many
// worker threads exist. Each shard accumulates into its own buffer and
// reductions run in shard order, so results are bit-identical whether the
// host has 1 core or 64.
inline constexpr int kShards = 16;

class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    // fn(shard) is invoked exactly once for each shard in [0, n_shards).
    // Re-entrant calls from inside a shard run serially.
    void run_shards(int n_shards, const std::function<void(int)>& fn) {
        if (n_shards <= 1 || workers_.empty() || tl_in_shard) {
            for (int s = 0; s < n_shards; ++s) fn(s);
            return;
        }
        auto job = std::make_shared<Job>();
        job->fn = fn;
        job->n = n_shards;
        job->pending.store(n_shards, std::memory_order_relaxed);
        {
            std::lock_guard<std::mutex> lk(m_);
            current_ = job;
            ++generation_;
            cv_work_.notify_all();
        }
        execute(*job);
        {
            std::unique_lock<std::mutex> lk(m_);
            cv_done_.wait(lk, [&] { return job->pending.load(std::memory_order_acquire) == 0; });
            if (current_ == job) current_.reset();
        }
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(m_);
            stop_ = true;
            cv_work_.notify_all();
        }
        for (auto& t : workers_) t.join();
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

private:
    struct Job {
        std::function<void(int)> fn;
        int n = 0;
        std::atomic<int> next{0};
        std::atomic<int> pending{0};
    };

    static thread_local bool tl_in_shard;

    ThreadPool() {
        unsigned hw = std::thread::hardware_concurrency();
        if (hw == 0) hw = 1;
        unsigned n = hw > 8 ? 8u : hw;
        // the caller thread also works, so spawn n-1
        for (unsigned i = 1; i < n; ++i) {
            workers_.emplace_back([this] { worker_main(); });
        }
    }

    void execute(Job& job) {
        tl_in_shard = true;
        while (true) {
            int s = job.next.fetch_add(1, std::memory_order_relaxed);
            if (s >= job.n) break;
            job.fn(s);
            if (job.pending.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                std::lock_guard<std::mutex> lk(m_);
                cv_done_.notify_all();
            }
        }
        tl_in_shard = false;
    }

    void worker_main() {
        uint64_t seen = 0;
        while (true) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock<std::mutex> lk(m_);
                cv_work_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                job = current_;
            }
            if (job) execute(*job);
        }
    }

    std::vector<std::thread> workers_;
    std::mutex m_;
    std::condition_variable cv_work_;
    std::condition_variable cv_done_;
    std::shared_ptr<Job> current_;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

inline thread_local bool ThreadPool::tl_in_shard = false;

// Splits [0, count) into kShards contiguous ranges and runs fn(begin, end)
// for the non-empty ones.
template <class Fn>
void parallel_ranges(int64_t count, Fn&& fn) {
    if (count <= 0) return;
    ThreadPool::instance().run_shards(kShards, [&](int s) {
        int64_t begin = count * s / kShards;
        int64_t end = count * (s + 1) / kShards;
        if (begin < end) fn(begin, end);
    });
}

// Same split but the callback also receives the shard index, for per-shard
// accumulation buffers.
template <class Fn>
void parallel_ranges_sharded(int64_t count, Fn&& fn) {
    if (count <= 0) return;
    ThreadPool::instance().run_shards(kShards, [&](int s) {
        int64_t begin = count * s / kShards;
        int64_t end = count * (s + 1) / kShards;
        if (begin < end) fn(s, begin, end);
    });
}

}  // namespace lcmfuse
