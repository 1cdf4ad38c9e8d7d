#pragma once

#include "dash/adapters/prompt_bank.hpp"
#include "dash/benchmark/labels.hpp"
#include "dash/core/image_cache.hpp"

#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dash {

/// One image to judge for one object. Never carries other labelers' verdicts.
struct ReviewTask {
    std::string task_id;  // "<object>/<content_hash>"
    std::string object;
    std::string content_hash;
    std::string question;  // exact evaluation prompt
};

inline void to_json(Json& j, const ReviewTask& t) {
    j = Json{{"task_id", t.task_id},
             {"object", t.object},
             {"content_hash", t.content_hash},
             {"image_url", "/api/image/" + t.content_hash},
             {"question", t.question}};
}

struct ObjectProgress {
    std::size_t tasks = 0;
    std::size_t verdicts = 0;
    double fraction() const { return tasks ? static_cast<double>(verdicts) / (2.0 * static_cast<double>(tasks)) : 0.0; }
};

/// Task queue for two (or more) labelers in front of a LabelStore.
class ReviewService {
public:
    ReviewService(LabelStore& store, std::set<std::string> labelers, const PromptBank& bank = PromptBank::builtin())
        : store_(store), labelers_(std::move(labelers)), bank_(bank) {}

    void add_task(const std::string& object, const std::string& content_hash) {
        std::lock_guard lock(mutex_);
        const std::string id = object + "/" + content_hash;
        if (index_.count(id)) return;
        index_[id] = tasks_.size();
        tasks_.push_back({id, object, content_hash, bank_.full_prompt(kStandardTemplate, object)});
    }

    std::size_t task_count() const {
        std::lock_guard lock(mutex_);
        return tasks_.size();
    }

    bool registered(const std::string& labeler) const { return labelers_.count(labeler) > 0; }

    /// First task in queue order this labeler has not judged yet.
    std::optional<ReviewTask> next_task(const std::string& labeler, const std::string& object_filter = {}) const {
        require_labeler(labeler);
        std::lock_guard lock(mutex_);
        for (const auto& t : tasks_) {
            if (!object_filter.empty() && t.object != object_filter) continue;
            if (!store_.has(t.object, t.content_hash, labeler)) return t;
        }
        return std::nullopt;
    }

    void submit(const std::string& labeler, const std::string& task_id, const std::string& verdict,
                std::string timestamp = {}) {
        require_labeler(labeler);
        const Verdict v = parse_verdict(verdict);
        ReviewTask task;
        {
            std::lock_guard lock(mutex_);
            auto it = index_.find(task_id);
            if (it == index_.end()) throw LabelError("unknown task '" + task_id + "'");
            task = tasks_[it->second];
        }
        store_.submit({task.object, task.content_hash, labeler, v, std::move(timestamp)});
    }

    std::map<std::string, ObjectProgress> progress() const {
        std::map<std::string, ObjectProgress> out;
        std::set<std::pair<std::string, std::string>> known;
        {
            std::lock_guard lock(mutex_);
            for (const auto& t : tasks_) {
                ++out[t.object].tasks;
                known.insert({t.object, t.content_hash});
            }
        }
        for (const auto& v : store_.verdicts())
            if (known.count({v.object, v.content_hash}) && labelers_.count(v.labeler)) ++out[v.object].verdicts;
        return out;
    }

    bool has_image(const std::string& content_hash) const {
        std::lock_guard lock(mutex_);
        for (const auto& t : tasks_)
            if (t.content_hash == content_hash) return true;
        return false;
    }

    LabelStore& store() { return store_; }

private:
    void require_labeler(const std::string& labeler) const {
        if (!registered(labeler)) throw LabelError("labeler '" + labeler + "' is not registered");
    }

    LabelStore& store_;
    std::set<std::string> labelers_;
    const PromptBank& bank_;
    std::vector<ReviewTask> tasks_;
    std::map<std::string, std::size_t> index_;
    mutable std::mutex mutex_;
};

inline Json progress_to_json(const std::map<std::string, ObjectProgress>& p) {
    Json j = Json::object();
    for (const auto& [obj, op] : p)
        j[obj] = Json{{"tasks", op.tasks}, {"verdicts", op.verdicts}, {"fraction", op.fraction()}};
    return j;
}

} // namespace dash
