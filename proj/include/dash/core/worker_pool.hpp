#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace dash {

/// Fixed-size pool. All pipeline parallelism goes through one instance so
/// that adapter limits hold globally.
class WorkerPool {
public:
    explicit WorkerPool(std::size_t threads) {
        if (threads == 0) threads = 1;
        for (std::size_t i = 0; i < threads; ++i) workers_.emplace_back([this] { run(); });
    }

    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    ~WorkerPool() {
        {
            std::lock_guard lock(mutex_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    std::size_t size() const noexcept { return workers_.size(); }

    void submit(std::function<void()> job) {
        {
            std::lock_guard lock(mutex_);
            jobs_.push(std::move(job));
        }
        cv_.notify_one();
    }

    /// Runs fn(0..n-1) and returns the results in index order. The calling
    /// thread helps, so nested use from inside a job cannot deadlock. The
    /// first exception (by index) is rethrown after all items finish.
    template <class Fn>
    auto map(std::size_t n, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
        using R = decltype(fn(std::size_t{}));
        // Shared so that helpers dequeued after completion find nothing to do.
        struct State {
            std::mutex m;
            std::condition_variable cv;
            std::size_t next = 0, done = 0, n = 0;
            std::function<void(std::size_t)> body;
        };
        auto st = std::make_shared<State>();
        st->n = n;
        std::vector<std::optional<R>> slots(n);
        std::vector<std::exception_ptr> errors(n);
        st->body = [&](std::size_t i) {
            try {
                slots[i].emplace(fn(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        };
        auto work = [st] {
            while (true) {
                std::size_t i;
                {
                    std::lock_guard lock(st->m);
                    if (st->next >= st->n) return;
                    i = st->next++;
                }
                st->body(i);
                {
                    std::lock_guard lock(st->m);
                    ++st->done;
                }
                st->cv.notify_all();
            }
        };
        const std::size_t helpers = std::min(n, workers_.size());
        for (std::size_t h = 0; h < helpers; ++h) submit(work);
        work();
        {
            std::unique_lock lock(st->m);
            st->cv.wait(lock, [&] { return st->done == n; });
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        std::vector<R> out;
        out.reserve(n);
        for (auto& s : slots) out.push_back(std::move(*s));
        return out;
    }

private:
    void run() {
        while (true) {
            std::function<void()> job;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [&] { return stopping_ || !jobs_.empty(); });
                if (stopping_ && jobs_.empty()) return;
                job = std::move(jobs_.front());
                jobs_.pop();
            }
            job();
        }
    }

    std::vector<std::thread> workers_;
    std::queue<std::function<void()>> jobs_;
    std::mutex mutex_;
    std::condition_variable cv_;
    bool stopping_ = false;
};

/// Order-preserving map over an optional pool; sequential without one.
template <class Fn>
auto parallel_map(WorkerPool* pool, std::size_t n, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
    if (pool && n > 1) return pool->map(n, std::forward<Fn>(fn));
    std::vector<decltype(fn(std::size_t{}))> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(fn(i));
    return out;
}

} // namespace dash
