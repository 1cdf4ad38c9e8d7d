#include "dash/pipeline/pipeline.hpp"
#include "dash/pipeline/stub_workspace.hpp"
#include "dash/review/server.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <sstream>

namespace {

constexpr int kOk = 0;
constexpr int kHardError = 1;
constexpr int kConfigError = 2;

struct Common {
    std::string config;
    std::string run_id = "default";
    std::string objects;
    std::string mode;
    bool stub = false;
    bool no_optimize = false;
    bool quiet = false;
};

std::set<std::string> split_csv(const std::string& s) {
    std::set<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.insert(item);
    return out;
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "run config (JSON)")->required();
    cmd->add_option("--run-id", c.run_id, "run identifier");
    cmd->add_option("--objects", c.objects, "comma-separated object filter");
    cmd->add_option("--mode", c.mode, "hallucination or reverse")->check(CLI::IsMember({"hallucination", "reverse"}));
    cmd->add_flag("--stub", c.stub, "use the synthetic adapters for every model");
    cmd->add_flag("--no-optimize", c.no_optimize, "skip the optimized image queries");
    cmd->add_flag("--quiet", c.quiet, "suppress progress logs");
}

dash::RunConfig load(const Common& c) {
    auto cfg = dash::load_run_config(c.config);
    if (!c.mode.empty()) cfg.policy.mode = dash::parse_filter_mode(c.mode);
    if (c.no_optimize || cfg.policy.mode == dash::FilterMode::reverse) cfg.optimize = false;
    return cfg;
}

struct Session {
    dash::Logger log;
    dash::AdapterSet adapters;
    std::unique_ptr<dash::Pipeline> pipeline;

    explicit Session(const Common& c) : log(c.quiet ? nullptr : &std::cerr) {
        auto cfg = load(c);
        adapters = dash::make_adapters(cfg, c.stub);
        pipeline = std::make_unique<dash::Pipeline>(std::move(cfg), adapters, c.run_id, log);
        if (!c.objects.empty()) pipeline->set_object_filter(split_csv(c.objects));
    }
};

template <class Fn>
int guarded(Fn&& fn) {
    try {
        fn();
        return kOk;
    } catch (const dash::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kHardError;
    }
}

void print_outcome(const dash::StageOutcome& o) {
    std::cout << o.stage << (o.skipped ? ": already complete" : ": done");
    if (!o.skipped && !o.info.empty()) std::cout << " " << o.info.dump();
    std::cout << "\n";
}

dash::ReviewServer* g_server = nullptr;

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hallucination mining: query generation, retrieval, clustering, benchmarks and fine-tune export"};
    app.require_subcommand(1);

    Common common;
    std::string manifest;
    int rc = kOk;

    for (auto stage : dash::kStages) {
        auto* cmd = app.add_subcommand(std::string(stage), "run the " + std::string(stage) + " stage");
        add_common(cmd, common);
        if (stage == "eval-bench") cmd->add_option("--manifest", manifest, "benchmark manifest (JSON lines)");
        cmd->callback([&, name = std::string(stage)] {
            rc = guarded([&] {
                Session s(common);
                if (!manifest.empty()) s.pipeline->set_benchmark_manifest(manifest);
                print_outcome(s.pipeline->run_stage(name));
            });
        });
    }

    auto* run = app.add_subcommand("run", "run every stage of the pipeline in order");
    add_common(run, common);
    run->callback([&] {
        rc = guarded([&] {
            Session s(common);
            for (const auto& o : s.pipeline->run_all()) print_outcome(o);
        });
    });

    auto* status = app.add_subcommand("status", "print the run manifest");
    add_common(status, common);
    status->callback([&] {
        rc = guarded([&] {
            Session s(common);
            std::cout << s.pipeline->store().manifest().dump(2) << "\n";
        });
    });

    std::string labelers = "a,b";
    std::string host = "127.0.0.1";
    int port = 8080;
    auto* review = app.add_subcommand("serve-review", "serve the labeling API for benchmark candidates");
    add_common(review, common);
    review->add_option("--labelers", labelers, "comma-separated labeler ids");
    review->add_option("--host", host);
    review->add_option("--port", port);
    review->callback([&] {
        rc = guarded([&] {
            Session s(common);
            auto& p = *s.pipeline;
            const auto cfg = p.config();
            if (cfg.labels_file.empty()) throw dash::ConfigError("config has no benchmark.labels file");
            dash::LabelStore store(cfg.labels_file);
            dash::ReviewService service(store, split_csv(labelers));
            for (const auto& [object, r] : p.review_candidates()) service.add_task(object, r.content_hash);
            for (const auto& pos : p.positives()) {
                if (pos.verified) continue;
                p.ensure_cached(pos.content_hash, pos.uri);
                service.add_task(pos.object, pos.content_hash);
            }
            dash::ReviewServer server(service, p.cache());
            g_server = &server;
            std::signal(SIGINT, [](int) {
                if (g_server) g_server->stop();
            });
            std::cerr << "serving " << service.task_count() << " tasks on http://" << host << ":" << port << "\n";
            server.run(host, port);
            g_server = nullptr;
        });
    });

    std::string out_dir;
    std::size_t size = 2000;
    auto* synth = app.add_subcommand("synth-corpus", "write a synthetic workspace: corpus, positives and config");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--size", size, "number of background images (planted and positive items are added on top)");
    synth->callback([&] {
        rc = guarded([&] {
            dash::synthetic::CorpusParams params;
            params.size = size;
            const auto ws = dash::write_stub_workspace(out_dir, params);
            std::cout << "corpus: " << ws.corpus.items.size() << " images\nconfig: " << ws.config.string() << "\n";
        });
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }
    return rc;
}
