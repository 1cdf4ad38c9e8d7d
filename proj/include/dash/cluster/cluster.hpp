#pragma once

#include "dash/adapters/interfaces.hpp"
#include "dash/core/errors.hpp"
#include "dash/core/image.hpp"
#include "dash/core/types.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace dash {

/// Groups exploitation survivors by the exploration success they were
/// retrieved for. `known_parents`, when given, must contain every parent.
inline std::vector<Cluster> precluster(const std::vector<ImageRecord>& records,
                                       const std::set<std::string>* known_parents = nullptr) {
    std::map<std::string, Cluster> by_parent;
    for (const auto& r : records) {
        const std::string& parent = r.lineage.parent_id;
        if (parent.empty()) throw LineageError("record " + r.id + " has no parent success");
        if (known_parents && !known_parents->count(parent))
            throw LineageError("record " + r.id + " names unknown parent " + parent);
        auto& c = by_parent[parent];
        c.object = r.object;
        c.members.push_back(r.id);
    }
    std::vector<Cluster> out;
    for (auto& [parent, c] : by_parent) {
        std::sort(c.members.begin(), c.members.end());
        c.members.erase(std::unique(c.members.begin(), c.members.end()), c.members.end());
        c.seeds = {parent};
        c.id = "pre/" + parent;
        out.push_back(std::move(c));
    }
    return out;
}

/// Symmetric member-to-member distances addressed by member id.
class DistanceTable {
public:
    DistanceTable() = default;

    /// distance(i, j) = 1 - similarity(e_i, e_j).
    static DistanceTable from_perceptual(const std::map<std::string, Vector>& embeddings,
                                         const PerceptualAdapter& perceptual) {
        return build(embeddings, [&](const Vector& a, const Vector& b) { return 1.0 - perceptual.similarity(a, b); });
    }

    /// distance(i, j) = 1 - <e_i, e_j> for unit-norm embeddings.
    static DistanceTable from_embeddings(const std::map<std::string, Vector>& embeddings) {
        return build(embeddings, [](const Vector& a, const Vector& b) {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
            return 1.0 - s;
        });
    }

    template <class Fn>
    static DistanceTable build(const std::map<std::string, Vector>& embeddings, Fn&& distance) {
        DistanceTable t;
        for (const auto& [id, _] : embeddings) t.add_id(id);
        std::vector<const Vector*> e;
        for (const auto& [_, v] : embeddings) e.push_back(&v);
        const std::size_t n = e.size();
        t.d_.assign(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) t.d_[i * n + j] = t.d_[j * n + i] = distance(*e[i], *e[j]);
        return t;
    }

    /// From an explicit symmetric matrix over `ids` (row-major).
    static DistanceTable from_matrix(const std::vector<std::string>& ids, std::vector<double> matrix) {
        DistanceTable t;
        for (const auto& id : ids) t.add_id(id);
        if (matrix.size() != ids.size() * ids.size()) throw DimensionError("distance matrix has wrong size");
        t.d_ = std::move(matrix);
        return t;
    }

    std::size_t index(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw LineageError("no embedding for member " + id);
        return it->second;
    }

    double operator()(std::size_t i, std::size_t j) const { return d_[i * ids_.size() + j]; }
    double operator()(const std::string& a, const std::string& b) const { return (*this)(index(a), index(b)); }

private:
    void add_id(const std::string& id) {
        index_.emplace(id, ids_.size());
        ids_.push_back(id);
    }

    std::vector<std::string> ids_;
    std::map<std::string, std::size_t> index_;
    std::vector<double> d_;
};

struct MergeConfig {
    double max_merge_distance = 0.6;
    std::size_t min_cluster_size = 5;

    void validate() const {
        if (!(max_merge_distance >= 0 && max_merge_distance <= 2)) throw ConfigError("max_merge_distance must lie in [0, 2]");
    }
};

struct MergeStep {
    std::string left;   // smallest member id of each merged cluster
    std::string right;
    double distance = 0.0;
};

struct MergeResult {
    std::vector<Cluster> clusters;  // size >= min_cluster_size
    std::vector<Cluster> dropped;   // merged but too small
    std::vector<MergeStep> steps;
};

namespace detail {

/// Final ordering and naming: size descending, then smallest member id.
inline void finalize_clusters(std::vector<Cluster>& cs, const std::string& prefix) {
    std::sort(cs.begin(), cs.end(), [](const Cluster& a, const Cluster& b) {
        if (a.size() != b.size()) return a.size() > b.size();
        return a.members.front() < b.members.front();
    });
    char buf[32];
    for (std::size_t i = 0; i < cs.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%03zu", i);
        cs[i].id = prefix + buf;
    }
}

} // namespace detail

/// Average-linkage agglomeration of pre-clusters. Repeatedly merges the pair
/// with the smallest mean pairwise member distance while that mean is at most
/// `max_merge_distance`. Ties go to the pair whose smallest member ids
/// (ordered) compare lexicographically smallest. Clusters smaller than
/// `min_cluster_size` are reported in `dropped`.
inline MergeResult merge_clusters(const std::vector<Cluster>& preclusters, const DistanceTable& dist,
                                  const MergeConfig& cfg = {}) {
    cfg.validate();
    struct Live {
        Cluster c;
        std::vector<std::size_t> idx;
        bool alive = true;
    };
    std::vector<Live> live;
    std::set<std::string> seen;
    for (const auto& p : preclusters) {
        if (p.members.empty()) continue;
        Live l{p, {}, true};
        std::sort(l.c.members.begin(), l.c.members.end());
        std::sort(l.c.seeds.begin(), l.c.seeds.end());
        for (const auto& m : l.c.members) {
            if (!seen.insert(m).second) throw LineageError("member " + m + " appears in two pre-clusters");
            l.idx.push_back(dist.index(m));
        }
        live.push_back(std::move(l));
    }
    const std::size_t n = live.size();
    // sum[i][j]: total member distance between clusters i and j.
    std::vector<double> sum(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (auto a : live[i].idx)
                for (auto b : live[j].idx) s += dist(a, b);
            sum[i * n + j] = sum[j * n + i] = s;
        }

    MergeResult out;
    while (true) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = n, bj = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (!live[i].alive) continue;
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!live[j].alive) continue;
                const double avg = sum[i * n + j] / static_cast<double>(live[i].c.size() * live[j].c.size());
                bool take = avg < best;
                if (!take && avg == best) {
                    auto key = [&](std::size_t a, std::size_t b) {
                        auto x = live[a].c.members.front(), y = live[b].c.members.front();
                        return x < y ? std::pair{x, y} : std::pair{y, x};
                    };
                    take = key(i, j) < key(bi, bj);
                }
                if (take) {
                    best = avg;
                    bi = i;
                    bj = j;
                }
            }
        }
        if (bi == n || best > cfg.max_merge_distance) break;
        out.steps.push_back({live[bi].c.members.front(), live[bj].c.members.front(), best});

        auto& a = live[bi];
        auto& b = live[bj];
        a.c.members.insert(a.c.members.end(), b.c.members.begin(), b.c.members.end());
        std::sort(a.c.members.begin(), a.c.members.end());
        a.c.seeds.insert(a.c.seeds.end(), b.c.seeds.begin(), b.c.seeds.end());
        std::sort(a.c.seeds.begin(), a.c.seeds.end());
        a.c.seeds.erase(std::unique(a.c.seeds.begin(), a.c.seeds.end()), a.c.seeds.end());
        a.idx.insert(a.idx.end(), b.idx.begin(), b.idx.end());
        b.alive = false;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == bi || !live[k].alive) continue;
            sum[bi * n + k] = sum[k * n + bi] = sum[bi * n + k] + sum[bj * n + k];
        }
    }

    for (auto& l : live) {
        if (!l.alive) continue;
        (l.c.size() >= cfg.min_cluster_size ? out.clusters : out.dropped).push_back(std::move(l.c));
    }
    const std::string object = out.clusters.empty() ? (out.dropped.empty() ? "" : out.dropped.front().object)
                                                    : out.clusters.front().object;
    detail::finalize_clusters(out.clusters, object + "/c");
    detail::finalize_clusters(out.dropped, object + "/small");
    return out;
}

/// Member embeddings keyed by record id.
inline std::map<std::string, Vector> perceptual_embeddings(const std::vector<ImageRecord>& records) {
    std::map<std::string, Vector> out;
    for (const auto& r : records) out.emplace(r.id, r.perceptual_embedding);
    return out;
}

inline std::map<std::string, Vector> index_embeddings(const std::vector<ImageRecord>& records) {
    std::map<std::string, Vector> out;
    for (const auto& r : records) out.emplace(r.id, r.embedding);
    return out;
}

/// Tiles images into a grid with `columns` cells per row, each cell scaled
/// by an integer factor. Gray if every input is gray.
inline Image contact_sheet(const std::vector<Image>& images, int columns = 8, int scale = 4, int pad = 1) {
    if (images.empty()) throw Error("contact sheet needs at least one image");
    columns = std::max(1, std::min<int>(columns, static_cast<int>(images.size())));
    int cw = 0, ch = 0;
    bool gray = true;
    for (const auto& im : images) {
        cw = std::max(cw, im.width);
        ch = std::max(ch, im.height);
        gray = gray && im.channels == 1;
    }
    const int channels = gray ? 1 : 3;
    const int rows = (static_cast<int>(images.size()) + columns - 1) / columns;
    const int cell_w = cw * scale + pad, cell_h = ch * scale + pad;
    Image sheet{columns * cell_w + pad, rows * cell_h + pad, channels, 255, {}};
    sheet.data.assign(sheet.sample_count(), 1.0);
    for (std::size_t k = 0; k < images.size(); ++k) {
        const auto& im = images[k];
        const int ox = pad + static_cast<int>(k % columns) * cell_w, oy = pad + static_cast<int>(k / columns) * cell_h;
        for (int y = 0; y < im.height * scale; ++y)
            for (int x = 0; x < im.width * scale; ++x)
                for (int c = 0; c < channels; ++c) {
                    const int sc = im.channels == 1 ? 0 : c;
                    const double v = im.data[(static_cast<std::size_t>(y / scale) * im.width + x / scale) * im.channels + sc];
                    sheet.data[(static_cast<std::size_t>(oy + y) * sheet.width + ox + x) * channels + c] = v;
                }
    }
    return sheet;
}

} // namespace dash
