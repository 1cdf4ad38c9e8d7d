#pragma once

#include "dash/core/errors.hpp"
#include "dash/core/hash.hpp"
#include "dash/core/image_cache.hpp"
#include "dash/core/types.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace dash {

inline constexpr int kRecordSchemaVersion = 1;

/// File-system safe rendering of an object name: letters, digits and '-' are
/// kept, every other byte becomes "_xx". Distinct names never share a file and
/// a stem never contains the '.' that separates it from the file kind.
inline std::string object_file_stem(std::string_view name) {
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(name.size());
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-';
        if (ok) {
            out.push_back(c);
        } else {
            const auto u = static_cast<unsigned char>(c);
            out += {'_', hex[u >> 4], hex[u & 15]};
        }
    }
    return out;
}

/// Canonical digest of a configuration snapshot.
inline std::string config_digest(const Json& config) { return sha256_hex(config.dump()); }

/// Append-only record stores plus the manifest of one run:
///
///   runs/<run_id>/manifest
///   runs/<run_id>/<stage>/schema
///   runs/<run_id>/<stage>/<object>.records
///
/// A stage is complete only after every object file it wrote has been flushed
/// to disk; completed stages refuse further writes.
class RunStore {
public:
    RunStore(const fs::path& runs_root, std::string run_id)
        : run_id_(std::move(run_id)), dir_(runs_root / run_id_) {
        fs::create_directories(dir_);
        if (fs::exists(manifest_path())) {
            std::ifstream in(manifest_path());
            manifest_ = Json::parse(in);
        } else {
            manifest_ = Json{{"run_id", run_id_}, {"stages", Json::object()}, {"embedding_dim", nullptr}};
        }
    }

    const std::string& run_id() const noexcept { return run_id_; }
    const fs::path& dir() const noexcept { return dir_; }
    fs::path manifest_path() const { return dir_ / "manifest"; }
    fs::path stage_dir(std::string_view stage) const { return dir_ / std::string(stage); }

    fs::path object_path(std::string_view stage, std::string_view object, std::string_view kind = "records") const {
        return stage_dir(stage) / (object_file_stem(object) + "." + std::string(kind));
    }

    Json manifest() const {
        std::lock_guard lock(mutex_);
        return manifest_;
    }

    /// Binds the run to a configuration. A run created under one config
    /// refuses to continue under another.
    void bind_config(const Json& config) {
        std::lock_guard lock(mutex_);
        const std::string digest = config_digest(config);
        if (manifest_.contains("config_hash")) {
            if (manifest_["config_hash"] != digest)
                throw ConfigError("config hash " + digest.substr(0, 12) + " does not match run manifest (" +
                                  manifest_["config_hash"].get<std::string>().substr(0, 12) + ")");
            return;
        }
        manifest_["config_hash"] = digest;
        manifest_["config"] = config;
        save_locked();
    }

    /// All embeddings of a run share one dimensionality; the first caller fixes it.
    void declare_embedding_dim(std::size_t dim) {
        std::lock_guard lock(mutex_);
        auto& slot = manifest_["embedding_dim"];
        if (slot.is_null()) {
            slot = dim;
            save_locked();
        } else if (slot.get<std::size_t>() != dim) {
            throw DimensionError("embedding dimension " + std::to_string(dim) + " differs from run dimension " +
                                 std::to_string(slot.get<std::size_t>()));
        }
    }

    std::optional<std::size_t> embedding_dim() const {
        std::lock_guard lock(mutex_);
        const auto& slot = manifest_["embedding_dim"];
        if (slot.is_null()) return std::nullopt;
        return slot.get<std::size_t>();
    }

    bool stage_complete(std::string_view stage) const {
        std::lock_guard lock(mutex_);
        return stage_complete_locked(stage);
    }

    bool object_complete(std::string_view stage, std::string_view object) const {
        std::lock_guard lock(mutex_);
        const auto& stages = manifest_["stages"];
        auto s = stages.find(std::string(stage));
        if (s == stages.end()) return false;
        auto o = s->find("objects");
        if (o == s->end()) return false;
        auto e = o->find(std::string(object));
        return e != o->end() && e->value("complete", false);
    }

    /// Starts (or restarts) a stage: writes the schema header. Existing
    /// partial files of incomplete objects are kept until reset_object.
    void begin_stage(std::string_view stage, std::string_view schema) {
        std::lock_guard lock(mutex_);
        if (stage_complete_locked(stage)) throw StageCompleteError("stage '" + std::string(stage) + "' already complete");
        fs::create_directories(stage_dir(stage));
        const Json header{{"schema", schema}, {"version", kRecordSchemaVersion}};
        write_file_atomic(stage_dir(stage) / "schema", header.dump() + "\n");
        manifest_["stages"][std::string(stage)]["complete"] = false;
        save_locked();
    }

    /// Truncates an object's outputs in a stage before it is (re)written.
    void reset_object(std::string_view stage, std::string_view object) {
        std::lock_guard lock(mutex_);
        if (stage_complete_locked(stage)) throw StageCompleteError("stage '" + std::string(stage) + "' already complete");
        const std::string stem = object_file_stem(object) + ".";
        if (fs::exists(stage_dir(stage)))
            for (const auto& entry : fs::directory_iterator(stage_dir(stage)))
                if (entry.path().filename().string().rfind(stem, 0) == 0) fs::remove(entry.path());
        auto& objects = manifest_["stages"][std::string(stage)]["objects"];
        if (objects.is_object()) objects.erase(std::string(object));
        save_locked();
    }

    /// Appends one JSON document per line and forces the bytes to disk before
    /// returning the number written.
    std::size_t append_json(std::string_view stage, std::string_view object, std::span<const Json> docs,
                            std::string_view kind = "records") {
        {
            std::lock_guard lock(mutex_);
            if (stage_complete_locked(stage))
                throw StageCompleteError("write to completed stage '" + std::string(stage) +
                                         "' (accidental re-run?)");
        }
        const fs::path path = object_path(stage, object, kind);
        fs::create_directories(path.parent_path());
        if (docs.empty()) {
            // Touch so that empty outputs are distinguishable from missing ones.
            std::ofstream(path, std::ios::app).close();
            return 0;
        }
        std::string buffer;
        for (const auto& d : docs) {
            buffer += d.dump();
            buffer += '\n';
        }
        std::FILE* f = std::fopen(path.c_str(), "ab");
        if (!f) throw Error("cannot open " + path.string());
        const bool ok = std::fwrite(buffer.data(), 1, buffer.size(), f) == buffer.size() && std::fflush(f) == 0 &&
                        ::fsync(::fileno(f)) == 0;
        std::fclose(f);
        if (!ok) throw Error("failed to persist records to " + path.string());
        return docs.size();
    }

    template <class T>
    std::size_t append_records(std::string_view stage, std::string_view object, std::span<const T> records,
                               std::string_view kind = "records") {
        std::vector<Json> docs;
        docs.reserve(records.size());
        for (const auto& r : records) docs.emplace_back(r);
        return append_json(stage, object, docs, kind);
    }

    template <class T>
    std::size_t append_records(std::string_view stage, std::string_view object, const std::vector<T>& records,
                               std::string_view kind = "records") {
        return append_records<T>(stage, object, std::span<const T>(records), kind);
    }

    std::vector<Json> read_json(std::string_view stage, std::string_view object, std::string_view kind = "records") const {
        std::vector<Json> out;
        const fs::path path = object_path(stage, object, kind);
        if (!fs::exists(path)) return out;
        std::ifstream in(path);
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) out.push_back(Json::parse(line));
        return out;
    }

    template <class T>
    std::vector<T> read_records(std::string_view stage, std::string_view object, std::string_view kind = "records") const {
        std::vector<T> out;
        for (const auto& j : read_json(stage, object, kind)) out.push_back(j.get<T>());
        return out;
    }

    void mark_object_complete(std::string_view stage, std::string_view object, std::size_t count) {
        std::lock_guard lock(mutex_);
        manifest_["stages"][std::string(stage)]["objects"][std::string(object)] = Json{{"count", count}, {"complete", true}};
        save_locked();
    }

    void mark_stage_complete(std::string_view stage) {
        std::lock_guard lock(mutex_);
        manifest_["stages"][std::string(stage)]["complete"] = true;
        save_locked();
    }

    /// Arbitrary per-stage metadata kept in the manifest (counts, failures, ...).
    void set_stage_info(std::string_view stage, std::string_view key, Json value) {
        std::lock_guard lock(mutex_);
        manifest_["stages"][std::string(stage)]["info"][std::string(key)] = std::move(value);
        save_locked();
    }

private:
    bool stage_complete_locked(std::string_view stage) const {
        const auto& stages = manifest_["stages"];
        auto s = stages.find(std::string(stage));
        return s != stages.end() && s->value("complete", false);
    }

    void save_locked() { write_file_atomic(manifest_path(), manifest_.dump(2) + "\n"); }

    std::string run_id_;
    fs::path dir_;
    Json manifest_;
    mutable std::mutex mutex_;
};

} // namespace dash
