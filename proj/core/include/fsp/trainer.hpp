#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsp/config.hpp"
#include "fsp/deform.hpp"
#include "fsp/gaussian.hpp"
#include "fsp/losses.hpp"
#include "fsp/param.hpp"
#include "fsp/synth.hpp"

namespace fsp {

// Everything one optimization run needs. Serialized under the [train]
// config section; see train_config_to / train_config_from for the keys.
struct TrainConfig {
    std::string paradigm = "iterative";  // iterative | deform
    uint64_t seed = 1;

    // Iteration budgets.
    int static_iters = 400;    // frame-0 fit (iterative paradigm)
    int per_frame_iters = 60;  // each frame after the first (iterative)
    int coarse_iters = 300;    // canonical-only stage (deform)
    int fine_iters = 600;      // joint stage (deform)

    // Initialization box. Its diagonal is the scene-extent reference used by
    // the center learning rate and the split-size threshold.
    int init_count = 32;
    Vec3d init_lo{-2.0, -2.0, -2.0};
    Vec3d init_hi{2.0, 2.0, 2.0};
    int sh_degree = 1;
    Vec3d background{0.0, 0.0, 0.0};

    // Loss weights. lambda_f follows `schedule` over the flow-supervised
    // phase; warmup_end/decay_end <= 0 mean "derive from the phase length"
    // (20% and 100% of it).
    double lambda_c = 0.5;
    double lambda_p = 1.0;
    LambdaSchedule schedule{0.1, 0.01, 0, 0};

    // Ablation switches.
    bool use_flow = true;      // any flow-derived supervision at all
    bool l1_flow = false;      // plain L1 instead of the uncertainty form
    bool use_injector = true;  // velocity head + refined dynamic maps (deform)

    // Correspondence and neighborhoods.
    int k = 4;
    double tau_dyn = 0.3;
    int m = 8;
    double alpha_floor = 0.5;
    int stride = 1;

    // Optimizer. Center rate is multiplied by the scene extent.
    CloudLearningRates cloud_lr;
    DeformLearningRates deform_lr;

    // Densification / pruning. The window [densify_start, densify_until] is
    // measured in completed iterations of the stage that owns structural
    // changes (static stage for iterative, coarse+fine for deform);
    // densify_until = 0 disables densification.
    double densify_grad = 2e-4;
    double densify_size_frac = 0.01;  // of scene extent
    int densify_cadence = 100;
    int densify_start = 100;
    int densify_until = 0;
    double prune_opacity = 0.005;
    int max_gaussians = 20000;

    // Deformation model shape.
    int field_features = 4;
    std::vector<int> field_res = {8, 16};
    int hidden = 32;
    double field_pad = 0.25;  // fractional padding of the init box

    double extent() const;  // diagonal length of the init box
    void validate() const;  // ConfigError on out-of-range fields

    // Schedule with auto warmup_end/decay_end resolved against the length of
    // the flow-supervised phase.
    LambdaSchedule resolved_schedule(int phase_length) const;
};

Config train_config_to(const TrainConfig& cfg);
TrainConfig train_config_from(Config& cfg);

// One logged optimization step. wall_ms is informational and excluded from
// determinism comparisons.
struct LossBreakdown {
    int iteration = 0;
    double color = 0.0;
    double flow = 0.0;
    double physical = 0.0;
    double velocity = 0.0;
    double lambda_f = 0.0;
    size_t gaussian_count = 0;
    double wall_ms = 0.0;
};

struct TrainReport {
    std::vector<LossBreakdown> log;
    // Count after initialization and after every densify/prune event.
    std::vector<size_t> count_trajectory;
    // Final-model reconstruction quality per frame (mean over views).
    std::vector<double> frame_psnr;
    std::vector<double> frame_ssim;
    // Projected-motion end-point error against the dataset's flow priors.
    std::optional<double> mean_epe;
};

std::string train_log_csv(const TrainReport& report);
void save_train_log(const std::string& path, const TrainReport& report);
// Structural equality ignoring wall-clock fields.
bool reports_equivalent(const TrainReport& a, const TrainReport& b);

// ---------------------------------------------------------------------------
// Structural adaptation. Decisions are made per Gaussian from the mean
// accumulated center gradient: over-threshold Gaussians are cloned (small
// ones; the copy is shifted one standard deviation along the gradient) or
// split (large ones; two copies at +-sigma/2 along the principal axis, scale
// divided by 1.6, original dropped), then near-transparent Gaussians are
// pruned. The generation counter bumps even when nothing changes.

struct DensifyOptions {
    double grad_threshold = 2e-4;
    double size_threshold = 0.02;  // world units; "large" means max scale above this
    double prune_opacity = 0.005;
    int max_gaussians = 20000;  // growth stops once the result would exceed this
};

struct DensifyOutcome {
    GaussianCloud cloud;
    // Per new Gaussian: the old index it descends from (metadata source).
    std::vector<int64_t> parent;
    // Per new Gaussian: old index whose optimizer state carries over, or -1
    // for freshly created entries (clone copies and split halves).
    std::vector<int64_t> adam_source;
    size_t clones = 0;
    size_t splits = 0;
    size_t pruned = 0;
    bool changed() const { return clones + splits + pruned > 0; }
};

DensifyOutcome densify_and_prune(const GaussianCloud& cloud, std::span<const Vec3d> grad_mean,
                                 const DensifyOptions& opt);

// ---------------------------------------------------------------------------
// Training entry points. All are deterministic for a fixed config + seed and
// abort with std::runtime_error when the loss or a gradient becomes
// non-finite.

struct StaticResult {
    GaussianCloud cloud;
    TrainReport report;
};

// Fit frame 0 only (round-robin over its views, uniform attention map).
// The first form seeds random Gaussians inside the configured init box; the
// second starts from a caller-provided cloud.
StaticResult train_static(const Dataset& data, const TrainConfig& cfg);
StaticResult train_static(const Dataset& data, const TrainConfig& cfg, GaussianCloud init);

struct IterativeResult {
    std::vector<GaussianCloud> frame_clouds;  // one state per frame
    TrainReport report;
};

// Static fit on frame 0, then per-frame tuning of centers, rotations, and
// view confidences with everything else frozen bitwise and the count held
// constant. Candidates and the dynamic mask are rebuilt per frame from the
// previous frame's self-rendered depth/alpha. The second form skips the
// static stage and starts from a caller-provided frame-0 cloud.
IterativeResult train_iterative(const Dataset& data, const TrainConfig& cfg);
IterativeResult train_iterative(const Dataset& data, const TrainConfig& cfg,
                                GaussianCloud cloud0);

struct DeformResult {
    GaussianCloud canonical;
    DeformModel model;
    std::vector<GaussianCloud> frame_clouds;  // deformed snapshots per frame
    TrainReport report;
};

// Coarse canonical-only stage (flow weight exactly zero), then joint
// fine-tuning of the canonical cloud, field, and decoders on uniformly
// sampled frames. Densification operates on the canonical cloud.
DeformResult train_deform(const Dataset& data, const TrainConfig& cfg);
DeformResult train_deform(const Dataset& data, const TrainConfig& cfg, GaussianCloud canonical0);

}  // namespace fsp
