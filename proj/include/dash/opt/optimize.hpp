#pragma once

#include "dash/adapters/interfaces.hpp"
#include "dash/adapters/ops.hpp"
#include "dash/adapters/prompt_bank.hpp"
#include "dash/core/hash.hpp"
#include "dash/core/image_cache.hpp"
#include "dash/core/types.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace dash {

struct OptConfig {
    int steps = 25;
    double base_step_size = 0.1;
    int warmup_steps = 3;
    double grad_clip_l2 = 0.1;
    double latent_step_factor = 0.1;
    double det_floor = 0.05;
    int start_timestep = 800;  // passed through to diffusion back ends; unused by single-step stubs
    double regularizer_weight = 1.0;
    double loss_clamp_eps = 1e-12;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    void validate() const {
        if (steps < 0) throw ConfigError("opt.steps must be >= 0");
        if (!(base_step_size > 0) || !(grad_clip_l2 > 0) || !(latent_step_factor > 0) || !(loss_clamp_eps > 0))
            throw ConfigError("opt step sizes, clip norm and eps must be positive");
        if (warmup_steps < 0) throw ConfigError("opt.warmup_steps must be >= 0");
        if (!(det_floor > 0 && det_floor < 1)) throw ConfigError("opt.det_floor must lie in (0, 1)");
        if (regularizer_weight < 0) throw ConfigError("opt.regularizer_weight must be >= 0");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
    }
};

inline void to_json(Json& j, const OptConfig& c) {
    j = Json{{"steps", c.steps},
             {"base_step_size", c.base_step_size},
             {"warmup_steps", c.warmup_steps},
             {"grad_clip_l2", c.grad_clip_l2},
             {"latent_step_factor", c.latent_step_factor},
             {"det_floor", c.det_floor},
             {"start_timestep", c.start_timestep},
             {"regularizer_weight", c.regularizer_weight},
             {"loss_clamp_eps", c.loss_clamp_eps},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"adam_eps", c.adam_eps},
             {"seed", c.seed}};
}

inline void from_json(const Json& j, OptConfig& c) {
    const OptConfig d;
    c.steps = j.value("steps", d.steps);
    c.base_step_size = j.value("base_step_size", d.base_step_size);
    c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
    c.grad_clip_l2 = j.value("grad_clip_l2", d.grad_clip_l2);
    c.latent_step_factor = j.value("latent_step_factor", d.latent_step_factor);
    c.det_floor = j.value("det_floor", d.det_floor);
    c.start_timestep = j.value("start_timestep", d.start_timestep);
    c.regularizer_weight = j.value("regularizer_weight", d.regularizer_weight);
    c.loss_clamp_eps = j.value("loss_clamp_eps", d.loss_clamp_eps);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    c.seed = j.value("seed", d.seed);
    c.validate();
}

// -- losses ---------------------------------------------------------------

inline double vlm_loss(double p_yes, double eps = 1e-12) { return -std::log(std::max(p_yes, eps)); }

/// d vlm_loss / d p_yes; zero where the clamp is active.
inline double vlm_loss_grad(double p_yes, double eps = 1e-12) { return p_yes > eps ? -1.0 / p_yes : 0.0; }

/// Detector confidence below `floor` is treated as zero.
inline double det_loss(double p_det, double floor = 0.05, double eps = 1e-12) {
    if (p_det < floor) return 0.0;
    return -std::log(std::max(1.0 - p_det, eps));
}

inline double det_loss_grad(double p_det, double floor = 0.05, double eps = 1e-12) {
    if (p_det < floor) return 0.0;
    return 1.0 - p_det > eps ? 1.0 / (1.0 - p_det) : 0.0;
}

/// (|z|^2 - d)^2 / (2d): zero at the expected squared norm of a standard
/// normal latent and rotation invariant.
inline double latent_reg(std::span<const double> z) {
    if (z.empty()) throw DimensionError("latent_reg needs d >= 1");
    const double d = static_cast<double>(z.size());
    double sq = 0.0;
    for (double v : z) sq += v * v;
    return (sq - d) * (sq - d) / (2.0 * d);
}

inline Vector latent_reg_grad(std::span<const double> z) {
    const double d = static_cast<double>(z.size());
    double sq = 0.0;
    for (double v : z) sq += v * v;
    Vector g(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) g[i] = 2.0 * (sq - d) * z[i] / d;
    return g;
}

struct LossTerms {
    double vlm = 0.0;
    double det = 0.0;
    double reg = 0.0;
    double total = 0.0;
};

inline LossTerms total_loss(double p_yes, double p_det, const Conditioning& c, const OptConfig& cfg = {}) {
    LossTerms t;
    t.vlm = vlm_loss(p_yes, cfg.loss_clamp_eps);
    t.det = det_loss(p_det, cfg.det_floor, cfg.loss_clamp_eps);
    t.reg = cfg.regularizer_weight != 0.0 ? latent_reg(c.latent) : 0.0;
    t.total = t.vlm + t.det + cfg.regularizer_weight * t.reg;
    return t;
}

// -- forward / backward through the adapter stack ---------------------------

struct OptAdapters {
    VlmAdapter& vlm;
    DetectorAdapter& detector;
    GeneratorAdapter& generator;
};

struct Objective {
    Tensor tensor;
    double p_yes = 0.0;
    double p_det = 0.0;
    LossTerms loss;
    Conditioning grad;  // d total / d conditioning
};

/// Renders `c`, scores it and back-propagates the total loss.
inline Objective evaluate_objective(const OptAdapters& a, const Conditioning& c, const std::string& prompt,
                                    const std::string& object, const OptConfig& cfg, bool with_grad = true) {
    Objective o;
    o.tensor = a.generator.render(c);
    const ProbabilityGrad yes = a.vlm.yes_probability_grad(o.tensor, prompt);
    check_probability(yes.p, "VLM yes-probability");
    const auto regions = a.detector.propose_grad(o.tensor, object);
    const ProbabilityGrad* best = nullptr;
    for (const auto& r : regions) {
        check_probability(r.p, "detector confidence");
        if (!best || r.p > best->p) best = &r;
    }
    o.p_yes = yes.p;
    o.p_det = best ? best->p : 0.0;
    o.loss = total_loss(o.p_yes, o.p_det, c, cfg);
    if (!with_grad) return o;

    Vector gx(o.tensor.values.size(), 0.0);
    const double dv = vlm_loss_grad(o.p_yes, cfg.loss_clamp_eps);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dv * yes.grad[i];
    if (best) {
        const double dd = det_loss_grad(o.p_det, cfg.det_floor, cfg.loss_clamp_eps);
        if (dd != 0.0)
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dd * best->grad[i];
    }
    o.grad = a.generator.vjp(c, gx);
    if (cfg.regularizer_weight != 0.0) {
        const Vector gr = latent_reg_grad(c.latent);
        for (std::size_t i = 0; i < gr.size(); ++i) o.grad.latent[i] += cfg.regularizer_weight * gr[i];
    }
    return o;
}

// -- optimizer ----------------------------------------------------------------

struct TrajectoryEntry {
    int step = 0;
    Conditioning conditioning;
    std::string image_id;
    double p_yes = 0.0;
    double p_det = 0.0;
    double l_vlm = 0.0;
    double l_det = 0.0;
    double l_reg = 0.0;
    double total = 0.0;
    bool rejected = false;
};

struct Trajectory {
    std::vector<TrajectoryEntry> entries;
    std::size_t best_index = 0;

    const TrajectoryEntry& best() const { return entries.at(best_index); }
};

inline void to_json(Json& j, const TrajectoryEntry& e) {
    j = Json{{"step", e.step},   {"image_id", e.image_id}, {"p_yes", e.p_yes}, {"p_det", e.p_det},
             {"l_vlm", e.l_vlm}, {"l_det", e.l_det},       {"l_reg", e.l_reg}, {"total", e.total},
             {"latent", e.conditioning.latent}, {"text", e.conditioning.text}};
    if (e.rejected) j["rejected"] = true;
}

inline void to_json(Json& j, const Trajectory& t) { j = Json{{"best_index", t.best_index}, {"entries", t.entries}}; }

/// Loss curves as whitespace-separated columns, one row per step.
inline std::string trajectory_table(const Trajectory& t) {
    std::string out = "step p_yes p_det l_vlm l_det l_reg total rejected\n";
    char row[256];
    for (const auto& e : t.entries) {
        std::snprintf(row, sizeof row, "%d %.6f %.6f %.6f %.6f %.6f %.6f %d\n", e.step, e.p_yes, e.p_det, e.l_vlm, e.l_det,
                      e.l_reg, e.total, e.rejected ? 1 : 0);
        out += row;
    }
    return out;
}

struct OptResult {
    Query query;  // kind=image, origin=optimized
    Trajectory trajectory;
    bool failed = false;
    std::string error;
};

inline double warmup_factor(int step, int warmup_steps) {
    if (warmup_steps <= 0 || step >= warmup_steps) return 1.0;
    return static_cast<double>(step) / warmup_steps;
}

/// Optimizes the generator conditioning seeded by a text query so that the
/// VLM answers yes while the detector stays quiet, and returns the image with
/// the lowest total loss along the trajectory (the initialization included).
inline OptResult optimize_query(const OptAdapters& a, const Query& init, const OptConfig& cfg,
                                ImageCache* cache = nullptr, EmbedderAdapter* embedder = nullptr,
                                const PromptBank& bank = PromptBank::builtin()) {
    cfg.validate();
    OptResult res;
    if (init.kind != QueryKind::text) throw Error("optimize_query needs a text query to start from");
    const std::string prompt = bank.full_prompt(kStandardTemplate, init.object.name);
    const std::string& object = init.object.name;

    try {
        Conditioning c;
        c.init_prompt_id = init.id;
        c.latent = sample_latent(a.generator.spec().latent_dim, seeded_key(cfg.seed, init.id));
        c.text = a.generator.encode_prompt(init.payload);
        a.generator.check(c);

        const std::size_t d = c.latent.size();
        Vector theta = flatten(c);
        Vector m(theta.size(), 0.0), v(theta.size(), 0.0);

        auto record = [&](int step, const Conditioning& cc, const Objective& o, bool rejected) {
            TrajectoryEntry e;
            e.step = step;
            e.conditioning = cc;
            e.image_id = image_id_for(sha256_hex(encode_pnm(tensor_to_image(o.tensor))));
            e.p_yes = o.p_yes;
            e.p_det = o.p_det;
            e.l_vlm = o.loss.vlm;
            e.l_det = o.loss.det;
            e.l_reg = o.loss.reg;
            e.total = o.loss.total;
            e.rejected = rejected;
            res.trajectory.entries.push_back(std::move(e));
        };

        Objective cur = evaluate_objective(a, c, prompt, object, cfg);
        if (!std::isfinite(cur.loss.total)) throw Error("non-finite loss at initialization");
        record(0, c, cur, false);
        Objective best_obj = cur;

        for (int step = 1; step <= cfg.steps; ++step) {
            Vector g = flatten(cur.grad);
            double norm = 0.0;
            for (double x : g) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > cfg.grad_clip_l2)
                for (auto& x : g) x *= cfg.grad_clip_l2 / norm;

            const Vector m_prev = m, v_prev = v, theta_prev = theta;
            const double lr = cfg.base_step_size * warmup_factor(step, cfg.warmup_steps);
            const double bc1 = 1.0 - std::pow(cfg.beta1, step);
            const double bc2 = 1.0 - std::pow(cfg.beta2, step);
            for (std::size_t i = 0; i < theta.size(); ++i) {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
                theta[i] -= (i < d ? lr * cfg.latent_step_factor : lr) * update;
            }
            Conditioning next = unflatten(theta, c);
            Objective o = evaluate_objective(a, next, prompt, object, cfg);
            if (!std::isfinite(o.loss.total)) {
                theta = theta_prev;
                m = m_prev;
                v = v_prev;
                record(step, unflatten(theta, c), cur, true);
                continue;
            }
            cur = std::move(o);
            record(step, next, cur, false);
            auto& t = res.trajectory;
            if (cur.loss.total < t.entries[t.best_index].total) {
                t.best_index = t.entries.size() - 1;
                best_obj = cur;
            }
        }

        const Image image = tensor_to_image(best_obj.tensor);
        std::string hash = sha256_hex(encode_pnm(image));
        if (cache) hash = cache->put(encode_pnm(image), "generated:" + a.generator.model_id(), {Stage::generated, init.id}).content_hash;

        Query& q = res.query;
        const auto slash = init.id.find_last_of('/');
        q.id = init.id.substr(0, init.id.find('/')) + "/opt/" + (slash == std::string::npos ? init.id : init.id.substr(slash + 1));
        q.object = init.object;
        q.kind = QueryKind::image;
        q.payload = hash;
        q.origin = QueryOrigin::optimized;
        q.init_prompt_id = init.id;
        if (embedder) q.embedding = embedder->embed_image(image);
    } catch (const Error& e) {
        res.failed = true;
        res.error = e.what();
    }
    return res;
}

} // namespace dash
