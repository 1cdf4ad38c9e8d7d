#pragma once

#include "dash/core/errors.hpp"
#include "dash/core/hash.hpp"
#include "dash/core/image.hpp"
#include "dash/core/types.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>

namespace dash {

namespace fs = std::filesystem;

inline Bytes read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Write via a uniquely named temporary plus rename, so readers never observe
/// a partial file and concurrent identical writers are harmless.
inline void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
    static std::atomic<unsigned long> counter{0};
    fs::create_directories(path.parent_path());
    const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
    const fs::path tmp = path.string() + ".tmp." + std::to_string(tid) + "." + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw Error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline void write_file_atomic(const fs::path& path, std::string_view text) {
    write_file_atomic(path, std::span{reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

/// Identifier derived from a content hash. Stable across processes, so a
/// repeated put of the same bytes always yields the same record id.
inline std::string image_id_for(std::string_view content_hash) { return std::string(content_hash.substr(0, 16)); }

/// Content-addressed image store: `<root>/<hh>/<sha256>`.
class ImageCache {
public:
    explicit ImageCache(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

    const fs::path& root() const noexcept { return root_; }

    fs::path path_for(std::string_view content_hash) const {
        return root_ / std::string(content_hash.substr(0, 2)) / std::string(content_hash);
    }

    bool contains(std::string_view content_hash) const { return fs::exists(path_for(content_hash)); }

    /// Stores decodable bytes exactly once. Returns the record describing them;
    /// a repeated put returns the record created by the first put.
    ImageRecord put(const Bytes& bytes, const std::string& uri, const Lineage& lineage) {
        decode_pnm(bytes);  // throws DecodeError with a diagnostic
        const std::string hash = sha256_hex(bytes);

        std::lock_guard lock(mutex_);
        if (auto it = known_.find(hash); it != known_.end()) return it->second;

        const fs::path path = path_for(hash);
        if (fs::exists(path)) {
            if (read_file_bytes(path) != bytes)
                throw HashCollisionError("content hash " + hash + " already maps to different bytes");
        } else {
            write_file_atomic(path, bytes);
        }
        ImageRecord rec;
        rec.id = image_id_for(hash);
        rec.uri = uri;
        rec.content_hash = hash;
        rec.lineage = lineage;
        known_.emplace(hash, rec);
        return rec;
    }

    Bytes bytes(std::string_view content_hash) const {
        const fs::path path = path_for(content_hash);
        if (!fs::exists(path)) throw Error("image " + std::string(content_hash) + " not in cache");
        return read_file_bytes(path);
    }

    Image load(std::string_view content_hash) const { return decode_pnm(bytes(content_hash)); }

private:
    fs::path root_;
    std::mutex mutex_;
    std::unordered_map<std::string, ImageRecord> known_;
};

} // namespace dash
