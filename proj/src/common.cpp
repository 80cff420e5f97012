#include "vqseq/common.hpp"

namespace vqseq {

ThreadPool::ThreadPool(unsigned workers) {
    if (workers == 0) workers = 1;
    for (unsigned i = 1; i < workers; ++i) {
        threads_.emplace_back([this, i] { worker_loop(i); });
    }
}

ThreadPool::~ThreadPool() {
    {
        std::lock_guard<std::mutex> lock(mu_);
        stop_ = true;
    }
    work_cv_.notify_all();
    for (auto& t : threads_) t.join();
}

void ThreadPool::worker_loop(unsigned worker_id) {
    uint64_t seen = 0;
    for (;;) {
        const std::function<void(size_t, unsigned)>* job = nullptr;
        {
            std::unique_lock<std::mutex> lock(mu_);
            work_cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            job = job_;
        }
        size_t i;
        while ((i = next_.fetch_add(1)) < job_count_) (*job)(i, worker_id);
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }
}

void ThreadPool::run(size_t count, const std::function<void(size_t, unsigned)>& fn) {
    if (count == 0) return;
    if (threads_.empty() || count == 1) {
        for (size_t i = 0; i < count; ++i) fn(i, 0);
        return;
    }
    {
        std::lock_guard<std::mutex> lock(mu_);
        job_ = &fn;
        job_count_ = count;
        next_.store(0);
        pending_ = threads_.size();
        ++generation_;
    }
    work_cv_.notify_all();
    // The calling thread participates as worker 0.
    size_t i;
    while ((i = next_.fetch_add(1)) < count) fn(i, 0);
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [&] { return pending_ == 0; });
}

}  // namespace vqseq
