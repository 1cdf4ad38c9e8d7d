#pragma once

#include "dash/adapters/remote.hpp"
#include "dash/adapters/replay.hpp"
#include "dash/adapters/synthetic.hpp"
#include "dash/benchmark/benchmark.hpp"
#include "dash/cluster/cluster.hpp"
#include "dash/finetune/finetune.hpp"
#include "dash/opt/optimize.hpp"
#include "dash/retrieval/retrieval.hpp"

#include <cstdlib>
#include <fstream>
#include <memory>
#include <regex>
#include <string>
#include <vector>

namespace dash {

/// Replaces ${NAME} in every string of `j` by the environment value. An
/// unset variable is a configuration error.
inline Json interpolate_env(const Json& j) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        static const std::regex var(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
        std::string out;
        auto begin = std::sregex_iterator(s.begin(), s.end(), var);
        std::size_t last = 0;
        for (auto it = begin; it != std::sregex_iterator(); ++it) {
            const auto& m = *it;
            const char* value = std::getenv(m[1].str().c_str());
            if (!value) throw ConfigError("environment variable " + m[1].str() + " is not set");
            out += s.substr(last, static_cast<std::size_t>(m.position(0)) - last);
            out += value;
            last = static_cast<std::size_t>(m.position(0) + m.length(0));
        }
        out += s.substr(last);
        return out;
    }
    if (j.is_object()) {
        Json out = Json::object();
        for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = interpolate_env(it.value());
        return out;
    }
    if (j.is_array()) {
        Json out = Json::array();
        for (const auto& e : j) out.push_back(interpolate_env(e));
        return out;
    }
    return j;
}

/// How to obtain one model: {"kind": "stub" | "remote" | "replay", ...}.
struct AdapterSpec {
    std::string kind = "stub";
    std::string model_id;
    std::string endpoint;    // remote
    std::string file;        // replay verdicts
    std::size_t dim = 0;     // remote embedder
    std::size_t concurrency = 4;
    Json params = Json::object();  // stub knobs

    static AdapterSpec from(const Json& j) {
        AdapterSpec s;
        s.kind = j.value("kind", s.kind);
        s.model_id = j.value("model_id", s.model_id);
        s.endpoint = j.value("endpoint", s.endpoint);
        s.file = j.value("file", s.file);
        s.dim = j.value("dim", s.dim);
        s.concurrency = j.value("concurrency", s.concurrency);
        s.params = j.value("params", Json::object());
        if (s.kind != "stub" && s.kind != "remote" && s.kind != "replay")
            throw ConfigError("adapter kind must be stub, remote or replay, got '" + s.kind + "'");
        if (s.kind == "remote" && s.endpoint.empty()) throw ConfigError("remote adapter '" + s.model_id + "' needs an endpoint");
        if (s.kind == "replay" && s.file.empty()) throw ConfigError("replay adapter '" + s.model_id + "' needs a file");
        return s;
    }
};

struct RunConfig {
    Json raw;  // as written, before interpolation; hashed into the manifest

    std::vector<ObjectSpec> objects;
    fs::path index_dir;
    std::string index_id = "flat";
    fs::path runs_dir = "runs";
    fs::path cache_dir = "cache";

    AdapterSpec vlm, detector, generator, embedder, perceptual, llm;
    std::vector<AdapterSpec> holdout_vlms;
    std::vector<AdapterSpec> transfer_vlms;

    FilterPolicy policy;
    RetrievalConfig retrieval;
    MergeConfig merge;
    OptConfig opt;
    bool optimize = true;
    FinetuneConfig finetune;
    BenchmarkCaps caps;
    fs::path labels_file;
    fs::path positives_file;
    std::size_t workers = 4;
    std::uint64_t seed = 0;

    void validate() const {
        if (objects.empty()) throw ConfigError("config lists no objects");
        for (const auto& o : objects) o.validate();
        policy.validate();
        retrieval.validate();
        merge.validate();
        opt.validate();
        caps.validate();
        if (workers == 0) throw ConfigError("workers must be >= 1");
        if (policy.mode == FilterMode::reverse && optimize)
            throw ConfigError("query optimization is only defined for hallucination mode");
    }

    /// Snapshot hashed into the run manifest: the raw config plus overrides.
    Json snapshot() const {
        Json s = raw;
        s["mode"] = std::string(to_string(policy.mode));
        s["optimize"] = optimize;
        return s;
    }

    std::vector<std::string> holdout_ids() const {
        std::vector<std::string> out;
        for (const auto& h : holdout_vlms) out.push_back(h.model_id);
        return out;
    }
};

inline std::vector<ObjectSpec> read_object_list(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open object list " + path.string());
    std::vector<ObjectSpec> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line[0] == '{')
            out.push_back(Json::parse(line).get<ObjectSpec>());
        else
            out.push_back(ObjectSpec{line, DatasetTag::coco, std::nullopt});
    }
    return out;
}

/// Parses a run config. Relative paths resolve against `base_dir`.
inline RunConfig parse_run_config(const Json& raw, const fs::path& base_dir = fs::current_path()) {
    RunConfig c;
    c.raw = raw;
    Json j;
    try {
        j = interpolate_env(raw);
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    auto path = [&](const std::string& p) -> fs::path {
        if (p.empty()) return {};
        fs::path q(p);
        return q.is_absolute() ? q : base_dir / q;
    };
    try {
        if (j.contains("objects")) {
            for (const auto& o : j["objects"]) {
                if (o.is_string())
                    c.objects.push_back(ObjectSpec{o.get<std::string>(), DatasetTag::coco, std::nullopt});
                else
                    c.objects.push_back(o.get<ObjectSpec>());
            }
        }
        if (j.contains("objects_file")) {
            auto more = read_object_list(path(j["objects_file"].get<std::string>()));
            c.objects.insert(c.objects.end(), more.begin(), more.end());
        }
        const Json idx = j.value("index", Json::object());
        c.index_dir = path(idx.value("dir", std::string{}));
        c.index_id = idx.value("id", c.index_id);
        c.runs_dir = path(j.value("runs_dir", std::string("runs")));
        c.cache_dir = path(j.value("cache_dir", std::string("cache")));

        const Json ad = j.value("adapters", Json::object());
        auto spec = [&](const char* role, const char* default_id) {
            AdapterSpec s = AdapterSpec::from(ad.value(role, Json::object()));
            if (s.model_id.empty()) s.model_id = default_id;
            if (s.kind == "replay" && !s.file.empty()) s.file = path(s.file).string();
            return s;
        };
        c.vlm = spec("vlm", "stub-vlm");
        c.detector = spec("detector", "stub-detector");
        c.generator = spec("generator", "stub-generator");
        c.embedder = spec("embedder", "stub-embedder");
        c.perceptual = spec("perceptual", "stub-perceptual");
        c.llm = spec("llm", "stub-llm");
        for (const char* key : {"holdout_vlms", "transfer_vlms"}) {
            auto& dst = std::string(key) == "holdout_vlms" ? c.holdout_vlms : c.transfer_vlms;
            for (const auto& h : ad.value(key, Json::array())) {
                AdapterSpec s = AdapterSpec::from(h);
                if (s.model_id.empty()) throw ConfigError(std::string(key) + " entries need a model_id");
                if (s.kind == "replay") s.file = path(s.file).string();
                dst.push_back(std::move(s));
            }
        }

        const Json th = j.value("thresholds", Json::object());
        c.policy.det_reject = th.value("det_reject", c.policy.det_reject);
        c.policy.det_accept = th.value("det_accept", c.policy.det_accept);
        c.retrieval.dedup_threshold = th.value("dedup", c.retrieval.dedup_threshold);
        c.merge.max_merge_distance = th.value("merge", c.merge.max_merge_distance);
        c.merge.min_cluster_size = th.value("min_cluster_size", c.merge.min_cluster_size);
        c.policy.mode = parse_filter_mode(j.value("mode", std::string("hallucination")));

        const Json rt = j.value("retrieval", Json::object());
        c.retrieval.k_explore = rt.value("k_explore", c.retrieval.k_explore);
        c.retrieval.k_exploit = rt.value("k_exploit", c.retrieval.k_exploit);
        c.retrieval.overfetch = rt.value("overfetch", c.retrieval.overfetch);
        c.retrieval.download_retries = rt.value("download_retries", c.retrieval.download_retries);

        if (j.contains("opt")) c.opt = j["opt"].get<OptConfig>();
        if (th.contains("det_floor")) c.opt.det_floor = th["det_floor"].get<double>();
        c.optimize = j.value("optimize", c.optimize);
        if (j.contains("finetune")) c.finetune = j["finetune"].get<FinetuneConfig>();
        if (c.finetune.holdout_vlms.empty()) c.finetune.holdout_vlms = c.holdout_ids();

        const Json bm = j.value("benchmark", Json::object());
        c.caps.min_per_object = bm.value("min_per_object", c.caps.min_per_object);
        c.caps.max_per_object = bm.value("max_per_object", c.caps.max_per_object);
        c.labels_file = path(bm.value("labels", std::string{}));
        c.positives_file = path(bm.value("positives", std::string{}));

        c.workers = j.value("workers", c.workers);
        c.seed = j.value("seed", c.seed);
        if (!j.contains("opt") || !j["opt"].contains("seed")) c.opt.seed = c.seed;
        if (!j.contains("finetune") || !j["finetune"].contains("seed")) c.finetune.seed = c.seed;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

inline RunConfig load_run_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config " + file.string());
    Json raw;
    try {
        raw = Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError("config " + file.string() + ": " + e.what());
    }
    return parse_run_config(raw, fs::absolute(file).parent_path());
}

// -- adapter registry ----------------------------------------------------------------

/// Owns every model the pipeline talks to.
struct AdapterSet {
    std::unique_ptr<VlmAdapter> vlm;
    std::unique_ptr<DetectorAdapter> detector;
    std::unique_ptr<GeneratorAdapter> generator;  // null when not needed
    std::unique_ptr<EmbedderAdapter> embedder;
    std::unique_ptr<PerceptualAdapter> perceptual;
    std::unique_ptr<LlmAdapter> llm;
    std::vector<std::unique_ptr<VlmAdapter>> holdout;
    std::vector<std::unique_ptr<VlmAdapter>> transfer;
};

inline synthetic::VlmParams stub_vlm_params(const AdapterSpec& s) {
    synthetic::VlmParams p;
    p.model_id = s.model_id.empty() ? p.model_id : s.model_id;
    p.bias = s.params.value("bias", p.bias);
    p.w_object = s.params.value("w_object", p.w_object);
    p.w_spurious = s.params.value("w_spurious", p.w_spurious);
    p.generic_scale = s.params.value("generic_scale", p.generic_scale);
    p.seed = s.params.value("seed", p.seed);
    return p;
}

inline std::unique_ptr<VlmAdapter> make_vlm(const AdapterSpec& s) {
    if (s.kind == "stub") return std::make_unique<synthetic::Vlm>(stub_vlm_params(s));
    if (s.kind == "remote") return std::make_unique<RemoteVlm>(s.model_id, s.endpoint, s.concurrency);
    return std::make_unique<ReplayVlm>(ReplayVlm::from_file(s.file, s.model_id));
}

inline std::unique_ptr<DetectorAdapter> make_detector(const AdapterSpec& s) {
    if (s.kind == "stub")
        return std::make_unique<synthetic::Detector>(s.params.value("gain", 10.0), s.params.value("threshold", 0.6), s.model_id);
    if (s.kind == "remote") return std::make_unique<RemoteDetector>(s.model_id, s.endpoint, s.concurrency);
    throw ConfigError("detector cannot be a replay adapter");
}

inline std::unique_ptr<GeneratorAdapter> make_generator(const AdapterSpec& s) {
    if (s.kind == "stub")
        return std::make_unique<synthetic::Generator>(s.params.value("latent_dim", std::size_t{8}),
                                                      s.params.value("seed", std::uint64_t{5}));
    throw ConfigError("generator '" + s.model_id + "': only in-process generators are differentiable");
}

inline std::unique_ptr<EmbedderAdapter> make_embedder(const AdapterSpec& s) {
    if (s.kind == "stub") return std::make_unique<synthetic::Embedder>();
    if (s.kind == "remote") {
        if (s.dim == 0) throw ConfigError("remote embedder needs dim");
        return std::make_unique<RemoteEmbedder>(s.model_id, s.endpoint, s.dim, s.concurrency);
    }
    throw ConfigError("embedder cannot be a replay adapter");
}

inline std::unique_ptr<PerceptualAdapter> make_perceptual(const AdapterSpec& s) {
    if (s.kind == "stub") return std::make_unique<synthetic::Perceptual>();
    if (s.kind == "remote") return std::make_unique<RemotePerceptual>(s.model_id, s.endpoint, s.concurrency);
    throw ConfigError("perceptual model cannot be a replay adapter");
}

inline std::unique_ptr<LlmAdapter> make_llm(const AdapterSpec& s) {
    if (s.kind == "stub") return std::make_unique<synthetic::Llm>(assets::dash_llm_reverse_system_v1);
    if (s.kind == "remote") return std::make_unique<RemoteLlm>(s.model_id, s.endpoint, s.concurrency);
    throw ConfigError("LLM cannot be a replay adapter");
}

/// Builds every adapter named by `c`. With `force_stub` all roles use the
/// synthetic stubs regardless of their configured kind.
inline AdapterSet make_adapters(const RunConfig& c, bool force_stub = false) {
    auto pick = [&](AdapterSpec s) {
        if (force_stub) s.kind = "stub";
        return s;
    };
    AdapterSet a;
    a.vlm = make_vlm(pick(c.vlm));
    a.detector = make_detector(pick(c.detector));
    if (c.optimize) a.generator = make_generator(pick(c.generator));
    a.embedder = make_embedder(pick(c.embedder));
    a.perceptual = make_perceptual(pick(c.perceptual));
    a.llm = make_llm(pick(c.llm));
    for (const auto& h : c.holdout_vlms) a.holdout.push_back(make_vlm(pick(h)));
    for (const auto& t : c.transfer_vlms) a.transfer.push_back(make_vlm(pick(t)));
    return a;
}

} // namespace dash
