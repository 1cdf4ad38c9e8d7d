#pragma once

#include "dash/adapters/replay.hpp"
#include "dash/core/image_cache.hpp"

#include <atomic>
#include <random>
#include <string>
#include <unistd.h>

namespace dash::testing {

inline fs::path fixture_dir() { return fs::path(DASH_FIXTURE_DIR); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& stem = "dash") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                (stem + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" +
                 std::to_string(std::random_device{}()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }

    const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const std::string& p) const { return path_ / p; }

private:
    fs::path path_;
};

/// Puts replay fixture images tag/[0, n) into `cache` and returns their records.
inline std::vector<ImageRecord> put_replay_images(ImageCache& cache, std::uint16_t tag, std::uint32_t n,
                                                  const std::string& object) {
    std::vector<ImageRecord> out;
    for (std::uint32_t i = 0; i < n; ++i) {
        auto r = cache.put(replay_fixture_image(tag, i), "replay://" + std::to_string(tag) + "/" + std::to_string(i),
                           Lineage{Stage::ingest, "replay"});
        r.object = object;
        out.push_back(std::move(r));
    }
    return out;
}

/// Every regular file under `root` (relative path -> bytes).
inline std::map<std::string, Bytes> snapshot_tree(const fs::path& root) {
    std::map<std::string, Bytes> out;
    if (!fs::exists(root)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file_bytes(e.path());
    return out;
}

} // namespace dash::testing
