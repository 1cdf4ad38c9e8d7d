#pragma once

#include "dash/adapters/synthetic.hpp"
#include "dash/analysis/analysis.hpp"
#include "dash/core/image_cache.hpp"

#include <string>

namespace dash {

struct StubWorkspace {
    fs::path dir;
    fs::path config;
    fs::path positives;
    synthetic::Corpus corpus;
};

/// Default run config over a synthetic workspace. Paths are relative to the
/// config file's directory.
inline Json stub_config_json() {
    Json objects = Json::array();
    for (const auto& o : synthetic::World::standard().objects()) objects.push_back(o.spec);
    return Json{
        {"objects", objects},
        {"index", {{"dir", "corpus"}}},
        {"runs_dir", "runs"},
        {"cache_dir", "cache"},
        {"adapters",
         {{"holdout_vlms",
           Json::array({Json{{"model_id", "stub-holdout-a"}, {"params", {{"seed", 21}, {"w_spurious", 4.0}}}},
                        Json{{"model_id", "stub-holdout-b"}, {"params", {{"seed", 31}, {"w_spurious", 3.6}}}}})}}},
        {"benchmark", {{"positives", "positives.jsonl"}, {"labels", "labels.jsonl"}}},
        {"workers", 4},
        {"seed", 0}};
}

/// Writes a corpus, a positives manifest (the object-present items) and a
/// config into `dir`.
inline StubWorkspace write_stub_workspace(const fs::path& dir, const synthetic::CorpusParams& params = {}) {
    StubWorkspace ws;
    ws.dir = fs::absolute(dir);
    ws.corpus = synthetic::write_corpus(ws.dir / "corpus", params);
    std::string pos;
    std::set<std::string> seen;
    for (const auto& it : ws.corpus.items) {
        if (it.kind != synthetic::ItemKind::present || !seen.insert(it.content_hash).second) continue;
        const auto* o = synthetic::World::standard().find(it.object);
        PositiveItem p{it.content_hash, it.object, o->spec.dataset, (ws.dir / "corpus" / it.file).string(), true};
        pos += Json(p).dump() + "\n";
    }
    ws.positives = ws.dir / "positives.jsonl";
    write_file_atomic(ws.positives, pos);
    ws.config = ws.dir / "config.json";
    write_file_atomic(ws.config, stub_config_json().dump(2) + "\n");
    return ws;
}

} // namespace dash
