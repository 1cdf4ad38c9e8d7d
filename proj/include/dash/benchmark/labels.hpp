#pragma once

#include "dash/core/errors.hpp"
#include "dash/core/image_cache.hpp"
#include "dash/core/types.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace dash {

enum class Verdict { yes, no, ambiguous };

inline std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::yes: return "yes";
        case Verdict::no: return "no";
        case Verdict::ambiguous: return "ambiguous";
    }
    return "?";
}

inline Verdict parse_verdict(std::string_view s) {
    if (s == "yes") return Verdict::yes;
    if (s == "no") return Verdict::no;
    if (s == "ambiguous") return Verdict::ambiguous;
    throw LabelError("verdict must be yes, no or ambiguous, got '" + std::string(s) + "'");
}

/// A labeler's answer about whether `object` is visible in one image.
struct LabelVerdict {
    std::string object;
    std::string content_hash;
    std::string labeler;
    Verdict verdict = Verdict::ambiguous;
    std::string timestamp;  // UTC, ISO-8601
};

inline void to_json(Json& j, const LabelVerdict& v) {
    j = Json{{"object", v.object},
             {"content_hash", v.content_hash},
             {"labeler", v.labeler},
             {"verdict", std::string(to_string(v.verdict))},
             {"timestamp", v.timestamp}};
}

inline void from_json(const Json& j, LabelVerdict& v) {
    j.at("object").get_to(v.object);
    j.at("content_hash").get_to(v.content_hash);
    j.at("labeler").get_to(v.labeler);
    v.verdict = parse_verdict(j.at("verdict").get<std::string>());
    v.timestamp = j.value("timestamp", std::string{});
}

inline std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

enum class Consensus { eligible, ineligible, pending };

inline std::string_view to_string(Consensus c) {
    switch (c) {
        case Consensus::eligible: return "eligible";
        case Consensus::ineligible: return "ineligible";
        case Consensus::pending: return "pending";
    }
    return "?";
}

using LabelKey = std::pair<std::string, std::string>;  // (object, content_hash)

struct ConsensusEntry {
    Consensus status = Consensus::pending;
    std::map<std::string, Verdict> verdicts;  // by labeler
};

using ConsensusTable = std::map<LabelKey, ConsensusEntry>;

/// Negative is eligible only when `required` labelers all said "no". Any
/// "yes" or "ambiguous" makes it ineligible; fewer verdicts leave it pending.
inline Consensus consensus_of(const std::map<std::string, Verdict>& verdicts, std::size_t required = 2) {
    for (const auto& [_, v] : verdicts)
        if (v != Verdict::no) return Consensus::ineligible;
    return verdicts.size() >= required ? Consensus::eligible : Consensus::pending;
}

/// Builds the consensus table from a verdict stream. A second verdict by the
/// same labeler on the same image is an immutability violation.
inline ConsensusTable ingest_labels(const std::vector<LabelVerdict>& stream, std::size_t required = 2) {
    ConsensusTable table;
    for (const auto& v : stream) {
        auto& entry = table[{v.object, v.content_hash}];
        if (!entry.verdicts.emplace(v.labeler, v.verdict).second)
            throw LabelError("labeler '" + v.labeler + "' already judged " + v.content_hash.substr(0, 12) + " for " +
                             v.object);
    }
    for (auto& [_, e] : table) e.status = consensus_of(e.verdicts, required);
    return table;
}

inline Json consensus_to_json(const ConsensusTable& t) {
    Json out = Json::array();
    for (const auto& [key, e] : t) {
        Json verdicts = Json::object();
        for (const auto& [l, v] : e.verdicts) verdicts[l] = std::string(to_string(v));
        out.push_back(Json{{"object", key.first},
                           {"content_hash", key.second},
                           {"status", std::string(to_string(e.status))},
                           {"verdicts", verdicts}});
    }
    return out;
}

/// Append-only verdict log, optionally persisted as JSON lines.
class LabelStore {
public:
    LabelStore() = default;

    explicit LabelStore(fs::path path) : path_(std::move(path)) {
        if (path_.empty() || !fs::exists(path_)) return;
        std::ifstream in(path_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto v = Json::parse(line).get<LabelVerdict>();
            keys_.insert(key_of(v));
            log_.push_back(std::move(v));
        }
    }

    /// Records `v`; throws LabelError if this labeler already judged the image.
    void submit(LabelVerdict v) {
        std::lock_guard lock(mutex_);
        if (keys_.count(key_of(v)))
            throw LabelError("verdict by '" + v.labeler + "' on " + v.content_hash.substr(0, 12) + " is immutable");
        if (v.timestamp.empty()) v.timestamp = utc_timestamp();
        if (!path_.empty()) {
            if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
            std::ofstream out(path_, std::ios::app);
            out << Json(v).dump() << '\n';
            out.flush();
            if (!out) throw Error("cannot append to label log " + path_.string());
        }
        keys_.insert(key_of(v));
        log_.push_back(std::move(v));
    }

    bool has(const std::string& object, const std::string& content_hash, const std::string& labeler) const {
        std::lock_guard lock(mutex_);
        return keys_.count({object, content_hash, labeler}) > 0;
    }

    std::vector<LabelVerdict> verdicts() const {
        std::lock_guard lock(mutex_);
        return log_;
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return log_.size();
    }

    ConsensusTable consensus(std::size_t required = 2) const { return ingest_labels(verdicts(), required); }

private:
    using Key = std::tuple<std::string, std::string, std::string>;
    static Key key_of(const LabelVerdict& v) { return {v.object, v.content_hash, v.labeler}; }

    fs::path path_;
    std::vector<LabelVerdict> log_;
    std::set<Key> keys_;
    mutable std::mutex mutex_;
};

} // namespace dash
