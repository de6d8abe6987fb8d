#include "fsp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fsp/correspondence.hpp"
#include "fsp/errors.hpp"
#include "fsp/fsio.hpp"
#include "fsp/metrics.hpp"
#include "fsp/rasterizer.hpp"
#include "fsp/rng.hpp"
#include "fsp/tape.hpp"

namespace fsp {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt(const Vec3d& v) { return fmt(v.x) + "," + fmt(v.y) + "," + fmt(v.z); }

Vec3d vec3_key(Config& cfg, const std::string& key, const Vec3d& fallback) {
    if (!cfg.has(key)) return fallback;
    std::vector<double> v = cfg.get_doubles(key);
    if (v.size() != 3) throw ConfigError("config: key '" + key + "' needs three components");
    return {v[0], v[1], v[2]};
}

CloudLearningRates scaled_cloud_lr(const TrainConfig& cfg) {
    CloudLearningRates lr = cfg.cloud_lr;
    lr.centers *= cfg.extent();
    return lr;
}

ParamSet build_params(const GaussianCloud& cloud, const CloudLearningRates& lr,
                      const DeformModel* model, const DeformLearningRates& dlr) {
    ParamSet params;
    add_cloud_segments(params, cloud, lr);
    if (model) add_deform_segments(params, *model, dlr);
    return params;
}

// Keep stored log-confidences inside the representable range after each
// optimizer step (the forward pass clamps, so out-of-range values would
// just accumulate dead gradient-free drift).
void clamp_confidence(ParamSet& params) {
    if (!params.has_segment(seg::kLogConfidence)) return;
    for (double& x : params.view(seg::kLogConfidence)) {
        x = std::clamp(x, kLogConfidenceMin, kLogConfidenceMax);
    }
}

// Mean accumulated center gradient per Gaussian between structural events.
struct GradAccum {
    std::vector<Vec3d> sum;
    std::vector<int> count;

    void reset(size_t n) {
        sum.assign(n, Vec3d{0.0, 0.0, 0.0});
        count.assign(n, 0);
    }

    void add(const ParamSet& params, std::span<const double> grad) {
        const ParamSegment& s = params.segment(seg::kCenters);
        for (size_t i = 0; i < sum.size(); ++i) {
            sum[i].x += grad[s.offset + 3 * i + 0];
            sum[i].y += grad[s.offset + 3 * i + 1];
            sum[i].z += grad[s.offset + 3 * i + 2];
            ++count[i];
        }
    }

    std::vector<Vec3d> mean() const {
        std::vector<Vec3d> out(sum.size(), Vec3d{0.0, 0.0, 0.0});
        for (size_t i = 0; i < sum.size(); ++i) {
            if (count[i] > 0) out[i] = sum[i] * (1.0 / double(count[i]));
        }
        return out;
    }
};

// Flat-index mapping for Adam::remap after a structural change: cloud
// segments follow the per-Gaussian ancestry, other segments (deformation
// weights) carry over verbatim.
std::vector<int64_t> densify_remap(const ParamSet& old_params, const ParamSet& new_params,
                                   std::span<const int64_t> adam_source) {
    std::vector<int64_t> map(new_params.size(), -1);
    const size_t new_count = adam_source.size();
    for (const ParamSegment& ns : new_params.segments()) {
        const ParamSegment& os = old_params.segment(ns.name);
        bool cloud_segment = ns.name == seg::kCenters || ns.name == seg::kRotations ||
                             ns.name == seg::kLogScales || ns.name == seg::kOpacityLogits ||
                             ns.name == seg::kSh || ns.name == seg::kLogConfidence;
        if (!cloud_segment) {
            if (ns.length != os.length) {
                throw std::logic_error("densify_remap: non-cloud segment changed size");
            }
            for (size_t i = 0; i < ns.length; ++i) map[ns.offset + i] = int64_t(os.offset + i);
            continue;
        }
        size_t comps = ns.length / new_count;
        for (size_t j = 0; j < new_count; ++j) {
            int64_t src = adam_source[j];
            if (src < 0) continue;
            for (size_t c = 0; c < comps; ++c) {
                map[ns.offset + j * comps + c] = int64_t(os.offset + size_t(src) * comps + c);
            }
        }
    }
    return map;
}

bool densify_due(int completed_iterations, const TrainConfig& cfg) {
    return cfg.densify_until > 0 && completed_iterations >= cfg.densify_start &&
           completed_iterations <= cfg.densify_until &&
           completed_iterations % cfg.densify_cadence == 0;
}

// Run one densify/prune transaction: sync values out of the parameter set,
// restructure the cloud, rebuild parameters and optimizer state around it.
void apply_densify(GaussianCloud& cloud, DeformModel* model, ParamSet& params, Adam& adam,
                   GradAccum& accum, const TrainConfig& cfg, TrainReport& report) {
    params_to_cloud(params, cloud);
    if (model) params_to_deform(params, *model);

    DensifyOptions opt;
    opt.grad_threshold = cfg.densify_grad;
    opt.size_threshold = cfg.densify_size_frac * cfg.extent();
    opt.prune_opacity = cfg.prune_opacity;
    opt.max_gaussians = cfg.max_gaussians;
    DensifyOutcome out = densify_and_prune(cloud, accum.mean(), opt);

    ParamSet old_params = std::move(params);
    cloud = std::move(out.cloud);
    params = build_params(cloud, scaled_cloud_lr(cfg), model, cfg.deform_lr);
    adam.remap(densify_remap(old_params, params, out.adam_source));
    accum.reset(cloud.size());
    report.count_trajectory.push_back(cloud.size());
}

// Random initialization inside the configured box. Per Gaussian the RNG is
// consumed in a fixed order (3 uniforms center, 4 normals rotation, 1
// uniform scale, 3 uniforms color); changing it changes every seeded run.
GaussianCloud random_init_cloud(const TrainConfig& cfg, Rng& rng) {
    GaussianCloud cloud;
    cloud.gaussians.reserve(size_t(cfg.init_count));
    const double extent = cfg.extent();
    for (int i = 0; i < cfg.init_count; ++i) {
        Gaussian3 g;
        g.center = {rng.uniform(cfg.init_lo.x, cfg.init_hi.x),
                    rng.uniform(cfg.init_lo.y, cfg.init_hi.y),
                    rng.uniform(cfg.init_lo.z, cfg.init_hi.z)};
        Quat<double> q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        g.rotation = q.normalized();
        double s = extent * rng.uniform(0.02, 0.06);
        g.log_scale = {std::log(s), std::log(s), std::log(s)};
        g.set_opacity(0.25);
        g.sh.assign(cfg.sh_degree == 0 ? 1 : 4, Vec3d{0.0, 0.0, 0.0});
        g.sh[0] = {(rng.uniform(0.2, 0.8) - 0.5) / kSh0, (rng.uniform(0.2, 0.8) - 0.5) / kSh0,
                   (rng.uniform(0.2, 0.8) - 0.5) / kSh0};
        cloud.gaussians.push_back(std::move(g));
    }
    cloud.dynamic_flags.assign(cloud.gaussians.size(), 0);
    return cloud;
}

void check_dataset(const Dataset& data, const char* who) {
    if (data.images.empty() || data.images[0].empty()) {
        throw std::domain_error(std::string(who) + ": dataset has no views");
    }
    if (data.cams.size() != data.images.size()) {
        throw std::domain_error(std::string(who) + ": camera/image frame counts differ");
    }
    for (size_t f = 0; f < data.images.size(); ++f) {
        if (data.images[f].size() != data.images[0].size() ||
            data.cams[f].size() != data.images[0].size()) {
            throw std::domain_error(std::string(who) + ": ragged view table");
        }
    }
}

[[noreturn]] void abort_nonfinite(const char* stage, int iteration) {
    throw std::runtime_error(std::string(stage) + ": non-finite loss at iteration " +
                             std::to_string(iteration) + "; training diverged");
}

// Math diagnostics raised mid-step (a non-finite tape node, a scale collapsed
// to zero, ...) mean the optimization diverged; surface them as the abort
// contract with the iteration attached. Runtime errors already carry a usable
// diagnostic and pass through.
[[noreturn]] void abort_diverged(const char* stage, int iteration, const char* what) {
    throw std::runtime_error(std::string(stage) + ": aborted at iteration " +
                             std::to_string(iteration) + ": " + what);
}

// Shared frame-0 fit: round-robin views, uniform attention, densification on
// cadence. Leaves the final values in `cloud`.
void run_static_stage(const Dataset& data, const TrainConfig& cfg, GaussianCloud& cloud,
                      TrainReport& report) {
    const auto& cams = data.cams[0];
    const auto& images = data.images[0];
    const size_t views = images.size();
    const size_t bands = cloud.gaussians[0].sh.size();

    RenderOptions ropts;
    ropts.depth_alpha_floor = cfg.alpha_floor;

    ParamSet params = build_params(cloud, scaled_cloud_lr(cfg), nullptr, {});
    Adam adam(params.size());
    GradAccum accum;
    accum.reset(cloud.size());
    report.count_trajectory.push_back(cloud.size());

    std::vector<Imaged> ones;
    ones.reserve(views);
    for (size_t v = 0; v < views; ++v) {
        ones.emplace_back(images[v].width(), images[v].height(), 1.0);
    }

    int it = 0;
    try {
        for (; it < cfg.static_iters; ++it) {
            auto t0 = Clock::now();
            size_t v = size_t(it) % views;

            Tape tape;
            TapeScope scope(tape);
            std::vector<Var> leaves = params.make_leaves();
            auto gaussians = gaussians_from_params<Var>(params, std::span<const Var>(leaves),
                                                        cloud.size(), bands);
            auto out = render<Var>(std::span<const Gaussian3T<Var>>(gaussians), cams[v],
                                   cfg.background, ropts);
            Var loss = color_loss_dynamic<Var>(out.color, images[v], ones[v], cfg.lambda_c);
            if (!std::isfinite(loss.v)) abort_nonfinite("train_static", it);

            std::vector<double> adj = tape.backward(loss.idx);
            std::vector<double> grad = extract_gradients(params, adj);
            accum.add(params, grad);
            adam.step(params, grad);

            LossBreakdown row;
            row.iteration = int(report.log.size());
            row.color = loss.v;
            row.gaussian_count = cloud.size();
            row.wall_ms = ms_since(t0);
            report.log.push_back(row);

            if (densify_due(it + 1, cfg)) {
                apply_densify(cloud, nullptr, params, adam, accum, cfg, report);
            }
        }
    } catch (const std::runtime_error&) {
        throw;
    } catch (const std::exception& e) {
        abort_diverged("train_static", it, e.what());
    }
    params_to_cloud(params, cloud);
}

void finalize_report(TrainReport& report, const std::vector<GaussianCloud>& frame_clouds,
                     const Dataset& data, const TrainConfig& cfg) {
    RenderOptions ropts;
    ropts.depth_alpha_floor = cfg.alpha_floor;
    size_t frames = std::min(frame_clouds.size(), data.images.size());
    for (size_t f = 0; f < frames; ++f) {
        double p = 0.0, s = 0.0;
        size_t views = data.images[f].size();
        for (size_t v = 0; v < views; ++v) {
            RenderOutput out = render(frame_clouds[f], data.cams[f][v], cfg.background, ropts);
            p += psnr(out.color, data.images[f][v]);
            s += ssim(out.color, data.images[f][v]);
        }
        report.frame_psnr.push_back(p / double(views));
        report.frame_ssim.push_back(s / double(views));
    }
    if (frame_clouds.size() >= 2 && !data.flows.empty()) {
        double epe = gaussian_flow_epe(frame_clouds, data.cams, data.flows);
        if (std::isfinite(epe)) report.mean_epe = epe;
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config plumbing.

double TrainConfig::extent() const {
    Vec3d d = init_hi - init_lo;
    return d.norm();
}

LambdaSchedule TrainConfig::resolved_schedule(int phase_length) const {
    LambdaSchedule s = schedule;
    if (s.decay_end <= 0) {
        s.decay_end = std::max(phase_length, 1);
        s.warmup_end = s.decay_end / 5;
    }
    return s;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
    if (paradigm != "iterative" && paradigm != "deform") {
        fail("paradigm must be 'iterative' or 'deform', got '" + paradigm + "'");
    }
    if (static_iters < 0 || per_frame_iters < 0 || coarse_iters < 0 || fine_iters < 0) {
        fail("iteration budgets must be >= 0");
    }
    if (init_count < 1) fail("init_count must be >= 1");
    if (!(init_hi.x > init_lo.x) || !(init_hi.y > init_lo.y) || !(init_hi.z > init_lo.z)) {
        fail("init box is degenerate");
    }
    if (sh_degree != 0 && sh_degree != 1) fail("sh_degree must be 0 or 1");
    if (lambda_c < 0.0 || lambda_c > 1.0) fail("lambda_c must be in [0, 1]");
    if (lambda_p < 0.0) fail("lambda_p must be >= 0");
    if (schedule.lambda_max <= 0.0) fail("lambda_max must be > 0");
    if (schedule.lambda_min_fraction < 0.0 || schedule.lambda_min_fraction > 1.0) {
        fail("lambda_min_fraction must be in [0, 1]");
    }
    if (k < 1) fail("k must be >= 1");
    if (tau_dyn < 0.0 || tau_dyn > 1.0) fail("tau_dyn must be in [0, 1]");
    if (m < 1) fail("m must be >= 1");
    if (alpha_floor < 0.0 || alpha_floor >= 1.0) fail("alpha_floor must be in [0, 1)");
    if (stride < 1) fail("stride must be >= 1");
    auto positive = [&](double v, const char* name) {
        if (!(v > 0.0)) fail(std::string(name) + " must be > 0");
    };
    positive(cloud_lr.centers, "lr_centers");
    positive(cloud_lr.rotations, "lr_rotations");
    positive(cloud_lr.log_scales, "lr_log_scales");
    positive(cloud_lr.opacity_logits, "lr_opacity");
    positive(cloud_lr.sh, "lr_sh");
    positive(cloud_lr.log_confidence, "lr_confidence");
    positive(deform_lr.planes, "lr_planes");
    positive(deform_lr.decoder, "lr_decoder");
    positive(deform_lr.velocity, "lr_velocity");
    if (densify_grad < 0.0) fail("densify_grad must be >= 0");
    if (!(densify_size_frac > 0.0)) fail("densify_size_frac must be > 0");
    if (densify_cadence < 1) fail("densify_cadence must be >= 1");
    if (densify_start < 0 || densify_until < 0) fail("densify window must be >= 0");
    if (prune_opacity < 0.0 || prune_opacity >= 1.0) fail("prune_opacity must be in [0, 1)");
    if (max_gaussians < 1) fail("max_gaussians must be >= 1");
    if (field_features < 1) fail("field_features must be >= 1");
    if (field_res.empty()) fail("field_res must not be empty");
    for (int r : field_res) {
        if (r < 2) fail("field_res entries must be >= 2");
    }
    if (hidden < 1) fail("hidden must be >= 1");
    if (field_pad < 0.0) fail("field_pad must be >= 0");
}

Config train_config_to(const TrainConfig& cfg) {
    Config out;
    auto set = [&](const char* key, const std::string& value) {
        out.set(std::string("train.") + key, value);
    };
    set("paradigm", cfg.paradigm);
    set("seed", std::to_string(cfg.seed));
    set("static_iters", std::to_string(cfg.static_iters));
    set("per_frame_iters", std::to_string(cfg.per_frame_iters));
    set("coarse_iters", std::to_string(cfg.coarse_iters));
    set("fine_iters", std::to_string(cfg.fine_iters));
    set("init_count", std::to_string(cfg.init_count));
    set("init_lo", fmt(cfg.init_lo));
    set("init_hi", fmt(cfg.init_hi));
    set("sh_degree", std::to_string(cfg.sh_degree));
    set("background", fmt(cfg.background));
    set("lambda_c", fmt(cfg.lambda_c));
    set("lambda_p", fmt(cfg.lambda_p));
    set("lambda_max", fmt(cfg.schedule.lambda_max));
    set("lambda_min_fraction", fmt(cfg.schedule.lambda_min_fraction));
    set("warmup_end", std::to_string(cfg.schedule.warmup_end));
    set("decay_end", std::to_string(cfg.schedule.decay_end));
    set("use_flow", cfg.use_flow ? "true" : "false");
    set("l1_flow", cfg.l1_flow ? "true" : "false");
    set("use_injector", cfg.use_injector ? "true" : "false");
    set("k", std::to_string(cfg.k));
    set("tau_dyn", fmt(cfg.tau_dyn));
    set("m", std::to_string(cfg.m));
    set("alpha_floor", fmt(cfg.alpha_floor));
    set("stride", std::to_string(cfg.stride));
    set("lr_centers", fmt(cfg.cloud_lr.centers));
    set("lr_rotations", fmt(cfg.cloud_lr.rotations));
    set("lr_log_scales", fmt(cfg.cloud_lr.log_scales));
    set("lr_opacity", fmt(cfg.cloud_lr.opacity_logits));
    set("lr_sh", fmt(cfg.cloud_lr.sh));
    set("lr_confidence", fmt(cfg.cloud_lr.log_confidence));
    set("lr_planes", fmt(cfg.deform_lr.planes));
    set("lr_decoder", fmt(cfg.deform_lr.decoder));
    set("lr_velocity", fmt(cfg.deform_lr.velocity));
    set("densify_grad", fmt(cfg.densify_grad));
    set("densify_size_frac", fmt(cfg.densify_size_frac));
    set("densify_cadence", std::to_string(cfg.densify_cadence));
    set("densify_start", std::to_string(cfg.densify_start));
    set("densify_until", std::to_string(cfg.densify_until));
    set("prune_opacity", fmt(cfg.prune_opacity));
    set("max_gaussians", std::to_string(cfg.max_gaussians));
    set("field_features", std::to_string(cfg.field_features));
    std::string res;
    for (size_t i = 0; i < cfg.field_res.size(); ++i) {
        if (i) res += ",";
        res += std::to_string(cfg.field_res[i]);
    }
    set("field_res", res);
    set("hidden", std::to_string(cfg.hidden));
    set("field_pad", fmt(cfg.field_pad));
    return out;
}

TrainConfig train_config_from(Config& cfg) {
    TrainConfig out;
    out.paradigm = cfg.get_string("train.paradigm", out.paradigm);
    int seed = cfg.get_int("train.seed", int(out.seed));
    if (seed < 0) throw ConfigError("train config: seed must be >= 0");
    out.seed = uint64_t(seed);
    out.static_iters = cfg.get_int("train.static_iters", out.static_iters);
    out.per_frame_iters = cfg.get_int("train.per_frame_iters", out.per_frame_iters);
    out.coarse_iters = cfg.get_int("train.coarse_iters", out.coarse_iters);
    out.fine_iters = cfg.get_int("train.fine_iters", out.fine_iters);
    out.init_count = cfg.get_int("train.init_count", out.init_count);
    out.init_lo = vec3_key(cfg, "train.init_lo", out.init_lo);
    out.init_hi = vec3_key(cfg, "train.init_hi", out.init_hi);
    out.sh_degree = cfg.get_int("train.sh_degree", out.sh_degree);
    out.background = vec3_key(cfg, "train.background", out.background);
    out.lambda_c = cfg.get_double("train.lambda_c", out.lambda_c);
    out.lambda_p = cfg.get_double("train.lambda_p", out.lambda_p);
    out.schedule.lambda_max = cfg.get_double("train.lambda_max", out.schedule.lambda_max);
    out.schedule.lambda_min_fraction =
        cfg.get_double("train.lambda_min_fraction", out.schedule.lambda_min_fraction);
    out.schedule.warmup_end = cfg.get_int("train.warmup_end", out.schedule.warmup_end);
    out.schedule.decay_end = cfg.get_int("train.decay_end", out.schedule.decay_end);
    out.use_flow = cfg.get_bool("train.use_flow", out.use_flow);
    out.l1_flow = cfg.get_bool("train.l1_flow", out.l1_flow);
    out.use_injector = cfg.get_bool("train.use_injector", out.use_injector);
    out.k = cfg.get_int("train.k", out.k);
    out.tau_dyn = cfg.get_double("train.tau_dyn", out.tau_dyn);
    out.m = cfg.get_int("train.m", out.m);
    out.alpha_floor = cfg.get_double("train.alpha_floor", out.alpha_floor);
    out.stride = cfg.get_int("train.stride", out.stride);
    out.cloud_lr.centers = cfg.get_double("train.lr_centers", out.cloud_lr.centers);
    out.cloud_lr.rotations = cfg.get_double("train.lr_rotations", out.cloud_lr.rotations);
    out.cloud_lr.log_scales = cfg.get_double("train.lr_log_scales", out.cloud_lr.log_scales);
    out.cloud_lr.opacity_logits = cfg.get_double("train.lr_opacity", out.cloud_lr.opacity_logits);
    out.cloud_lr.sh = cfg.get_double("train.lr_sh", out.cloud_lr.sh);
    out.cloud_lr.log_confidence =
        cfg.get_double("train.lr_confidence", out.cloud_lr.log_confidence);
    out.deform_lr.planes = cfg.get_double("train.lr_planes", out.deform_lr.planes);
    out.deform_lr.decoder = cfg.get_double("train.lr_decoder", out.deform_lr.decoder);
    out.deform_lr.velocity = cfg.get_double("train.lr_velocity", out.deform_lr.velocity);
    out.densify_grad = cfg.get_double("train.densify_grad", out.densify_grad);
    out.densify_size_frac = cfg.get_double("train.densify_size_frac", out.densify_size_frac);
    out.densify_cadence = cfg.get_int("train.densify_cadence", out.densify_cadence);
    out.densify_start = cfg.get_int("train.densify_start", out.densify_start);
    out.densify_until = cfg.get_int("train.densify_until", out.densify_until);
    out.prune_opacity = cfg.get_double("train.prune_opacity", out.prune_opacity);
    out.max_gaussians = cfg.get_int("train.max_gaussians", out.max_gaussians);
    out.field_features = cfg.get_int("train.field_features", out.field_features);
    if (cfg.has("train.field_res")) {
        out.field_res.clear();
        for (double r : cfg.get_doubles("train.field_res")) {
            out.field_res.push_back(int(std::lround(r)));
        }
    }
    out.hidden = cfg.get_int("train.hidden", out.hidden);
    out.field_pad = cfg.get_double("train.field_pad", out.field_pad);
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Report plumbing.

std::string train_log_csv(const TrainReport& report) {
    std::ostringstream out;
    out << "iteration,loss_color,loss_flow,loss_phys,loss_vel,lambda_f,gaussian_count,wall_ms\n";
    for (const LossBreakdown& r : report.log) {
        char wall[32];
        std::snprintf(wall, sizeof(wall), "%.3f", r.wall_ms);
        out << r.iteration << ',' << fmt(r.color) << ',' << fmt(r.flow) << ',' << fmt(r.physical)
            << ',' << fmt(r.velocity) << ',' << fmt(r.lambda_f) << ',' << r.gaussian_count << ','
            << wall << '\n';
    }
    return out.str();
}

void save_train_log(const std::string& path, const TrainReport& report) {
    write_file_atomic(path, train_log_csv(report));
}

bool reports_equivalent(const TrainReport& a, const TrainReport& b) {
    if (a.log.size() != b.log.size()) return false;
    for (size_t i = 0; i < a.log.size(); ++i) {
        const LossBreakdown& x = a.log[i];
        const LossBreakdown& y = b.log[i];
        if (x.iteration != y.iteration || x.color != y.color || x.flow != y.flow ||
            x.physical != y.physical || x.velocity != y.velocity || x.lambda_f != y.lambda_f ||
            x.gaussian_count != y.gaussian_count) {
            return false;
        }
    }
    if (a.count_trajectory != b.count_trajectory) return false;
    if (a.frame_psnr != b.frame_psnr || a.frame_ssim != b.frame_ssim) return false;
    if (a.mean_epe.has_value() != b.mean_epe.has_value()) return false;
    if (a.mean_epe && *a.mean_epe != *b.mean_epe) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Densify / prune.

DensifyOutcome densify_and_prune(const GaussianCloud& cloud, std::span<const Vec3d> grad_mean,
                                 const DensifyOptions& opt) {
    if (cloud.empty()) throw std::domain_error("densify_and_prune: empty cloud");
    if (grad_mean.size() != cloud.size()) {
        throw std::domain_error("densify_and_prune: one gradient vector per Gaussian required");
    }

    const size_t n = cloud.size();
    const bool has_flags = !cloud.dynamic_flags.empty();
    const bool has_conf = !cloud.log_confidence.empty();
    const size_t budget = size_t(std::max(opt.max_gaussians, 1));

    struct Entry {
        Gaussian3 g;
        int64_t parent;
        int64_t adam_src;
    };
    std::vector<Entry> grown;
    grown.reserve(n + n / 4);

    DensifyOutcome out;
    for (size_t i = 0; i < n; ++i) {
        const Gaussian3& g = cloud.gaussians[i];
        const Vec3d grad = grad_mean[i];
        const double gnorm = grad.norm();
        // Growing adds one entry net; `grown.size() + (n - i)` is the final
        // count if nothing else grows, so this keeps the result <= budget.
        const bool room = grown.size() + (n - i) < budget;
        if (gnorm > opt.grad_threshold && room) {
            const Vec3d scale = g.scale();
            const double smax = std::max(scale.x, std::max(scale.y, scale.z));
            if (smax <= opt.size_threshold) {
                // Clone: keep the original, add a copy shifted one standard
                // deviation along the mean gradient direction.
                Vec3d dir = grad * (1.0 / gnorm);
                Mat3d sigma = covariance_from(g.rotation, scale);
                double step = std::sqrt(dir.dot(sigma * dir));
                Entry copy{g, int64_t(i), -1};
                copy.g.center = g.center + dir * step;
                grown.push_back({g, int64_t(i), int64_t(i)});
                grown.push_back(std::move(copy));
                ++out.clones;
            } else {
                // Split: two copies at +-sigma/2 along the principal axis
                // with every scale divided by 1.6; the original is dropped.
                int axis = 0;
                if (scale.y > scale[axis]) axis = 1;
                if (scale.z > scale[axis]) axis = 2;
                Mat3d rot = rotation_matrix(g.rotation.normalized());
                Vec3d dir{rot.m[0][axis], rot.m[1][axis], rot.m[2][axis]};
                double off = 0.5 * scale[axis];
                Gaussian3 half = g;
                half.log_scale = {g.log_scale.x - std::log(1.6), g.log_scale.y - std::log(1.6),
                                  g.log_scale.z - std::log(1.6)};
                Entry a{half, int64_t(i), -1};
                Entry b{half, int64_t(i), -1};
                a.g.center = g.center + dir * off;
                b.g.center = g.center - dir * off;
                grown.push_back(std::move(a));
                grown.push_back(std::move(b));
                ++out.splits;
            }
        } else {
            grown.push_back({g, int64_t(i), int64_t(i)});
        }
    }

    for (Entry& e : grown) {
        if (e.g.opacity() < opt.prune_opacity) {
            ++out.pruned;
            continue;
        }
        out.cloud.gaussians.push_back(std::move(e.g));
        out.parent.push_back(e.parent);
        out.adam_source.push_back(e.adam_src);
        if (has_flags) out.cloud.dynamic_flags.push_back(cloud.dynamic_flags[size_t(e.parent)]);
        if (has_conf) out.cloud.log_confidence.push_back(cloud.log_confidence[size_t(e.parent)]);
    }
    if (out.cloud.empty()) {
        throw std::runtime_error("densify_and_prune: every Gaussian was pruned");
    }
    out.cloud.generation = cloud.generation + 1;
    return out;
}

// ---------------------------------------------------------------------------
// Static fit.

StaticResult train_static(const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    check_dataset(data, "train_static");
    Rng rng(cfg.seed);
    StaticResult res;
    res.cloud = random_init_cloud(cfg, rng);
    run_static_stage(data, cfg, res.cloud, res.report);
    return res;
}

StaticResult train_static(const Dataset& data, const TrainConfig& cfg, GaussianCloud init) {
    cfg.validate();
    check_dataset(data, "train_static");
    if (init.empty()) throw std::domain_error("train_static: empty initial cloud");
    StaticResult res;
    res.cloud = std::move(init);
    run_static_stage(data, cfg, res.cloud, res.report);
    return res;
}

// ---------------------------------------------------------------------------
// Iterative paradigm.

namespace {

// Per-frame tuning loop; expects res.frame_clouds to hold the frame-0 state.
void run_iterative_frames(const Dataset& data, const TrainConfig& cfg, IterativeResult& res) {
    const int frames = int(data.images.size());
    const size_t views = data.images[0].size();

    GaussianCloud& first = res.frame_clouds[0];
    if (first.num_views() != views) first.register_views(views);
    if (first.dynamic_flags.size() != first.size()) first.dynamic_flags.assign(first.size(), 0);

    RenderOptions ropts;
    ropts.depth_alpha_floor = cfg.alpha_floor;
    CorrespondenceOptions copt{cfg.k, cfg.alpha_floor, cfg.stride};
    const size_t bands = res.frame_clouds[0].gaussians[0].sh.size();
    LambdaSchedule sched = cfg.resolved_schedule((frames - 1) * cfg.per_frame_iters);
    int dynamic_iter = 0;  // flow-phase clock driving the schedule

    for (int t = 1; t < frames; ++t) {
        const GaussianCloud& prev = res.frame_clouds.back();
        const size_t n = prev.size();
        GaussianCloud curr = prev;  // same revision; structure is frozen here

        // Fresh optimizer per frame; only motion and confidence move.
        ParamSet params = build_params(curr, scaled_cloud_lr(cfg), nullptr, {});
        params.set_trainable(seg::kLogScales, false);
        params.set_trainable(seg::kOpacityLogits, false);
        params.set_trainable(seg::kSh, false);
        Adam adam(params.size());

        const bool have_flow =
            size_t(t - 1) < data.flows.size() && data.flows[t - 1].size() == views;
        if (cfg.use_flow && !have_flow) {
            std::fprintf(stderr,
                         "train_iterative: no flow prior for frame %d; flow term skipped\n", t);
        }

        // Previous-frame candidates from the self-rendered depth/alpha, plus
        // per-view attention maps and the refreshed dynamic mask.
        std::vector<CandidateSet> sets;
        std::vector<Imaged> dmaps;
        sets.reserve(views);
        dmaps.reserve(views);
        for (size_t v = 0; v < views; ++v) {
            RenderOutput ro = render(prev, data.cams[t - 1][v], cfg.background, ropts);
            sets.push_back(foreground_search(prev, data.cams[t - 1][v], ro.depth, ro.alpha, copt));
            if (have_flow) {
                dmaps.push_back(dynamic_map_from_flow(data.flows[t - 1][v]));
            } else {
                dmaps.emplace_back(data.images[t][v].width(), data.images[t][v].height(), 1.0);
            }
        }
        std::vector<uint8_t> mask(n, 0);
        if (have_flow) {
            mask = lift_dynamic_mask(sets, dmaps, n, cfg.tau_dyn);
        }
        curr.dynamic_flags = mask;

        std::vector<Vec3d> prev_centers(n);
        for (size_t i = 0; i < n; ++i) prev_centers[i] = prev.gaussians[i].center;
        std::vector<std::vector<int32_t>> neighbors =
            dynamic_neighbors(prev_centers, mask, cfg.m);

        std::vector<Vec3<Var>> centers_prev_const(n);

        int it = 0;
        try {
        for (; it < cfg.per_frame_iters; ++it, ++dynamic_iter) {
            auto t0 = Clock::now();
            size_t v = size_t(it) % views;
            double lambda_f = (cfg.use_flow && have_flow) ? sched.at(dynamic_iter) : 0.0;

            Tape tape;
            TapeScope scope(tape);
            std::vector<Var> leaves = params.make_leaves();
            auto gaussians =
                gaussians_from_params<Var>(params, std::span<const Var>(leaves), n, bands);
            auto out = render<Var>(std::span<const Gaussian3T<Var>>(gaussians),
                                   data.cams[t][v], cfg.background, ropts);

            LossTerms<Var> terms;
            terms.color = color_loss_dynamic<Var>(out.color, data.images[t][v], dmaps[v],
                                                  cfg.lambda_c);

            std::vector<Vec3<Var>> centers_curr(n);
            for (size_t i = 0; i < n; ++i) centers_curr[i] = gaussians[i].center;
            for (size_t i = 0; i < n; ++i) {
                centers_prev_const[i] = {Var(prev_centers[i].x), Var(prev_centers[i].y),
                                         Var(prev_centers[i].z)};
            }
            terms.physical = physical_loss<Var>(centers_curr, centers_prev_const, neighbors);

            if (lambda_f > 0.0) {
                auto pred = predicted_flows<Var>(sets[v], prev.generation,
                                                 std::span<const Vec3<Var>>(centers_prev_const),
                                                 curr.generation,
                                                 std::span<const Vec3<Var>>(centers_curr),
                                                 data.cams[t - 1][v], data.cams[t][v]);
                if (cfg.l1_flow) {
                    terms.flow = flow_loss_l1<Var>(data.flows[t - 1][v], sets[v], pred);
                } else {
                    const ParamSegment& cs = params.segment(seg::kLogConfidence);
                    std::vector<Var> conf(n);
                    for (size_t i = 0; i < n; ++i) {
                        conf[i] = confidence_from_log(leaves[cs.offset + i * views + v]);
                    }
                    terms.flow = flow_loss_kl<Var>(data.flows[t - 1][v], sets[v], pred,
                                                   std::span<const Var>(conf));
                }
            }

            Var total = total_loss_iterative(terms, cfg.lambda_p, lambda_f);
            if (!std::isfinite(total.v)) abort_nonfinite("train_iterative", dynamic_iter);

            std::vector<double> adj = tape.backward(total.idx);
            std::vector<double> grad = extract_gradients(params, adj);
            adam.step(params, grad);
            clamp_confidence(params);

            LossBreakdown row;
            row.iteration = int(res.report.log.size());
            row.color = terms.color.v;
            row.flow = terms.flow.v;
            row.physical = terms.physical.v;
            row.lambda_f = lambda_f;
            row.gaussian_count = n;
            row.wall_ms = ms_since(t0);
            res.report.log.push_back(row);
        }
        } catch (const std::runtime_error&) {
            throw;
        } catch (const std::exception& e) {
            abort_diverged("train_iterative", dynamic_iter, e.what());
        }

        params_to_cloud(params, curr);
        if (curr.size() != prev.size()) {
            throw std::logic_error("train_iterative: Gaussian count changed after frame 0");
        }
        res.frame_clouds.push_back(std::move(curr));
    }

    finalize_report(res.report, res.frame_clouds, data, cfg);
}

}  // namespace

IterativeResult train_iterative(const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    check_dataset(data, "train_iterative");
    Rng rng(cfg.seed);
    IterativeResult res;
    GaussianCloud cloud = random_init_cloud(cfg, rng);
    run_static_stage(data, cfg, cloud, res.report);
    res.frame_clouds.push_back(std::move(cloud));
    run_iterative_frames(data, cfg, res);
    return res;
}

IterativeResult train_iterative(const Dataset& data, const TrainConfig& cfg,
                                GaussianCloud cloud0) {
    cfg.validate();
    check_dataset(data, "train_iterative");
    if (cloud0.empty()) throw std::domain_error("train_iterative: empty frame-0 cloud");
    IterativeResult res;
    res.report.count_trajectory.push_back(cloud0.size());
    res.frame_clouds.push_back(std::move(cloud0));
    run_iterative_frames(data, cfg, res);
    return res;
}

// ---------------------------------------------------------------------------
// Deformation paradigm.

namespace {

DeformResult run_deform(const Dataset& data, const TrainConfig& cfg, GaussianCloud cloud,
                        Rng& rng) {
    const int frames = int(data.images.size());
    if (frames < 2) throw std::domain_error("train_deform: at least two frames required");
    const size_t views = data.images[0].size();
    const double dt = 1.0 / double(frames - 1);
    auto frame_time = [&](int f) { return double(f) / double(frames - 1); };

    if (cloud.num_views() != views) cloud.register_views(views);

    HexPlaneLayout field;
    field.feature_dim = cfg.field_features;
    field.resolutions = cfg.field_res;
    Vec3d pad = (cfg.init_hi - cfg.init_lo) * cfg.field_pad;
    field.lo = cfg.init_lo - pad;
    field.hi = cfg.init_hi + pad;
    field.t0 = 0.0;
    field.t1 = 1.0;
    DeformModel model = make_deform_model(field, rng, cfg.hidden);

    DeformResult res;
    ParamSet params = build_params(cloud, scaled_cloud_lr(cfg), &model, cfg.deform_lr);
    Adam adam(params.size());
    GradAccum accum;
    accum.reset(cloud.size());
    res.report.count_trajectory.push_back(cloud.size());

    RenderOptions ropts;
    ropts.depth_alpha_floor = cfg.alpha_floor;
    CorrespondenceOptions copt{cfg.k, cfg.alpha_floor, cfg.stride};
    const size_t bands = cloud.gaussians[0].sh.size();
    LambdaSchedule sched = cfg.resolved_schedule(cfg.fine_iters);

    std::vector<Imaged> ones;
    ones.reserve(views);
    for (size_t v = 0; v < views; ++v) {
        ones.emplace_back(data.images[0][v].width(), data.images[0][v].height(), 1.0);
    }

    // Coarse stage: canonical cloud only, uniform attention, no flow terms.
    int it = 0;
    try {
    for (; it < cfg.coarse_iters; ++it) {
        auto t0 = Clock::now();
        size_t v = size_t(it) % views;
        int f = int((size_t(it) / views) % size_t(frames));

        Tape tape;
        TapeScope scope(tape);
        std::vector<Var> leaves = params.make_leaves();
        auto gaussians =
            gaussians_from_params<Var>(params, std::span<const Var>(leaves), cloud.size(), bands);
        auto out = render<Var>(std::span<const Gaussian3T<Var>>(gaussians), data.cams[f][v],
                               cfg.background, ropts);
        Var loss = color_loss_dynamic<Var>(out.color, data.images[f][v], ones[v], cfg.lambda_c);
        if (!std::isfinite(loss.v)) abort_nonfinite("train_deform (coarse)", it);

        std::vector<double> adj = tape.backward(loss.idx);
        std::vector<double> grad = extract_gradients(params, adj);
        accum.add(params, grad);
        adam.step(params, grad);

        LossBreakdown row;
        row.iteration = int(res.report.log.size());
        row.color = loss.v;
        row.gaussian_count = cloud.size();
        row.wall_ms = ms_since(t0);
        res.report.log.push_back(row);

        if (densify_due(it + 1, cfg)) {
            apply_densify(cloud, &model, params, adam, accum, cfg, res.report);
        }
    }
    } catch (const std::runtime_error&) {
        throw;
    } catch (const std::exception& e) {
        abort_diverged("train_deform (coarse)", it, e.what());
    }

    // Fine stage: joint optimization on uniformly sampled frames.
    bool warned_no_flow = false;
    it = 0;
    try {
    for (; it < cfg.fine_iters; ++it) {
        auto t0 = Clock::now();
        size_t v = size_t(it) % views;
        int f = int(rng.uniform_index(uint64_t(frames)));
        const double tf = frame_time(f);
        const double tp = frame_time(std::max(f - 1, 0));
        const size_t n = cloud.size();
        double lambda_f = cfg.use_flow ? sched.at(it) : 0.0;

        const bool have_flow = f >= 1 && size_t(f - 1) < data.flows.size() &&
                               data.flows[f - 1].size() == views;
        if (cfg.use_flow && f >= 1 && !have_flow && !warned_no_flow) {
            std::fprintf(stderr, "train_deform: missing flow priors; flow term skipped\n");
            warned_no_flow = true;
        }
        const bool flow_active = cfg.use_flow && have_flow && lambda_f > 0.0;

        // Double-precision prelude: sync parameters, build the candidate set
        // against the deformed state at t-1, and derive the attention map.
        params_to_cloud(params, cloud);
        params_to_deform(params, model);
        DeformParams<double> dp = deform_params(model);
        const PinholeCamera& cam_curr = data.cams[f][v];

        CandidateSet set;
        GaussianCloud prev_cloud;
        if (flow_active) {
            const PinholeCamera& cam_prev = data.cams[f - 1][v];
            prev_cloud.gaussians = deform_cloud<double>(
                model, dp, std::span<const Gaussian3>(cloud.gaussians), tp);
            prev_cloud.dynamic_flags = cloud.dynamic_flags;
            prev_cloud.log_confidence = cloud.log_confidence;
            prev_cloud.generation = cloud.generation;
            RenderOutput ro = render(prev_cloud, cam_prev, cfg.background, ropts);
            set = foreground_search(prev_cloud, cam_prev, ro.depth, ro.alpha, copt);
        }

        Imaged dmap;
        if (cfg.use_injector) {
            GaussianCloud curr_cloud;
            curr_cloud.gaussians = deform_cloud<double>(
                model, dp, std::span<const Gaussian3>(cloud.gaussians), tf);
            curr_cloud.generation = cloud.generation;
            std::vector<Vec3d> vel = velocity_cloud<double>(
                model, dp, std::span<const Gaussian3>(curr_cloud.gaussians), tf, dt);
            dmap = refined_dynamic_map(curr_cloud, cam_curr, vel, dt, ropts);
        } else if (have_flow) {
            dmap = dynamic_map_from_flow(data.flows[f - 1][v]);
        } else {
            dmap = ones[v];
        }

        Tape tape;
        TapeScope scope(tape);
        std::vector<Var> leaves = params.make_leaves();
        auto canonical =
            gaussians_from_params<Var>(params, std::span<const Var>(leaves), n, bands);
        DeformParams<Var> dpv = deform_params_from<Var>(params, std::span<const Var>(leaves));
        auto deformed = deform_cloud<Var>(model, dpv,
                                          std::span<const Gaussian3T<Var>>(canonical), tf);
        auto out = render<Var>(std::span<const Gaussian3T<Var>>(deformed), cam_curr,
                               cfg.background, ropts);

        LossTerms<Var> terms;
        terms.color = color_loss_dynamic<Var>(out.color, data.images[f][v], dmap, cfg.lambda_c);

        if (flow_active) {
            const PinholeCamera& cam_prev = data.cams[f - 1][v];
            auto deformed_prev = deform_cloud<Var>(
                model, dpv, std::span<const Gaussian3T<Var>>(canonical), tp);
            std::vector<Vec3<Var>> centers_prev(n), centers_curr(n);
            for (size_t i = 0; i < n; ++i) {
                centers_prev[i] = deformed_prev[i].center;
                centers_curr[i] = deformed[i].center;
            }
            auto pred = predicted_flows<Var>(set, cloud.generation,
                                             std::span<const Vec3<Var>>(centers_prev),
                                             cloud.generation,
                                             std::span<const Vec3<Var>>(centers_curr), cam_prev,
                                             cam_curr);
            if (cfg.l1_flow) {
                terms.flow = flow_loss_l1<Var>(data.flows[f - 1][v], set, pred);
            } else {
                const ParamSegment& cs = params.segment(seg::kLogConfidence);
                std::vector<Var> conf(n);
                for (size_t i = 0; i < n; ++i) {
                    conf[i] = confidence_from_log(leaves[cs.offset + i * views + v]);
                }
                terms.flow = flow_loss_kl<Var>(data.flows[f - 1][v], set, pred,
                                               std::span<const Var>(conf));
            }
            if (cfg.use_injector) {
                auto vel = velocity_cloud<Var>(
                    model, dpv, std::span<const Gaussian3T<Var>>(deformed_prev), tp, dt);
                auto items = velocity_alignment_items<Var>(
                    set, data.flows[f - 1][v], cloud.generation, cam_curr,
                    std::span<const Vec3<Var>>(centers_prev), std::span<const Vec3<Var>>(vel),
                    dt);
                terms.velocity = velocity_alignment(items);
            }
        }

        Var total = total_loss_deform(terms, lambda_f);
        if (!std::isfinite(total.v)) abort_nonfinite("train_deform (fine)", it);

        std::vector<double> adj = tape.backward(total.idx);
        std::vector<double> grad = extract_gradients(params, adj);
        accum.add(params, grad);
        adam.step(params, grad);
        clamp_confidence(params);

        LossBreakdown row;
        row.iteration = int(res.report.log.size());
        row.color = terms.color.v;
        row.flow = terms.flow.v;
        row.velocity = terms.velocity.v;
        row.lambda_f = lambda_f;
        row.gaussian_count = n;
        row.wall_ms = ms_since(t0);
        res.report.log.push_back(row);

        if (densify_due(cfg.coarse_iters + it + 1, cfg)) {
            apply_densify(cloud, &model, params, adam, accum, cfg, res.report);
        }
    }
    } catch (const std::runtime_error&) {
        throw;
    } catch (const std::exception& e) {
        abort_diverged("train_deform (fine)", it, e.what());
    }

    params_to_cloud(params, cloud);
    params_to_deform(params, model);
    res.canonical = cloud;
    res.model = model;

    DeformParams<double> dp = deform_params(res.model);
    for (int f = 0; f < frames; ++f) {
        GaussianCloud snap;
        snap.gaussians = deform_cloud<double>(
            res.model, dp, std::span<const Gaussian3>(res.canonical.gaussians), frame_time(f));
        snap.dynamic_flags = res.canonical.dynamic_flags;
        snap.log_confidence = res.canonical.log_confidence;
        snap.generation = res.canonical.generation;
        res.frame_clouds.push_back(std::move(snap));
    }

    finalize_report(res.report, res.frame_clouds, data, cfg);
    return res;
}

}  // namespace

DeformResult train_deform(const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    check_dataset(data, "train_deform");
    Rng rng(cfg.seed);
    GaussianCloud cloud = random_init_cloud(cfg, rng);
    return run_deform(data, cfg, std::move(cloud), rng);
}

DeformResult train_deform(const Dataset& data, const TrainConfig& cfg, GaussianCloud canonical0) {
    cfg.validate();
    check_dataset(data, "train_deform");
    if (canonical0.empty()) throw std::domain_error("train_deform: empty canonical cloud");
    Rng rng(cfg.seed);
    return run_deform(data, cfg, std::move(canonical0), rng);
}

}  // namespace fsp
