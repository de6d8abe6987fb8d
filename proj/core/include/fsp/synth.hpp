#pragma once

#include <filesystem>
#include <vector>

#include "fsp/camera.hpp"
#include "fsp/config.hpp"
#include "fsp/gaussian.hpp"
#include "fsp/image.hpp"
#include "fsp/rasterizer.hpp"
#include "fsp/rng.hpp"

namespace fsp {

// Synthetic dynamic scenes: clusters of Gaussians ("blobs") translating along
// scripted paths, observed by a calibrated rig. The generator renders every
// observation with the production rasterizer and derives pixel-exact flow
// from the scripted trajectories, standing in for a real capture rig plus a
// flow predictor whose error model is configurable.

enum class MotionKind { kStatic, kLinear, kOrbit, kWaypoints };

struct BlobSpec {
    int count = 12;             // Gaussians in the blob
    Vec3d center{0, 0, 0};
    double spread = 0.3;        // stddev of Gaussian centers around the blob center
    double scale_min = 0.08;    // per-axis Gaussian scale range
    double scale_max = 0.2;
    double opacity_min = 0.6;
    double opacity_max = 0.9;
    Vec3d base_color{0.8, 0.3, 0.2};  // mean RGB, jittered per Gaussian
    int sh_degree = 0;

    MotionKind motion = MotionKind::kStatic;
    Vec3d velocity{0, 0, 0};     // linear: world units per unit normalized time
    Vec3d orbit_center{0, 0, 0}; // orbit: circular path around this point
    Vec3d orbit_axis{0, 0, 1};
    double orbit_turns = 0.5;    // revolutions over the clip
    std::vector<Vec3d> waypoints;  // piecewise-linear path, uniform in time

    // Blob translation at normalized time t in [0, 1], relative to t = 0.
    // Blobs translate rigidly along their path; they do not spin.
    Vec3d displacement(double t) const;
};

enum class RigKind { kRing, kMonocularArc };

struct SceneSpec {
    std::vector<BlobSpec> blobs;
    RigKind rig = RigKind::kRing;
    int views = 4;              // ring camera count; the arc rig always has 1
    int frames = 8;
    int width = 64, height = 48;
    double focal = 60.0;
    double rig_radius = 5.0;
    double rig_height = 0.6;
    double arc_span = 0.5;      // radians swept by the arc camera over the clip
    Vec3d background{0, 0, 0};
    double sigma_noise = 0.0;   // flow corruption, px
    double outlier_frac = 0.0;

    int view_count() const { return rig == RigKind::kMonocularArc ? 1 : views; }
    double frame_time(int frame) const { return double(frame) / double(frames - 1); }
    void validate() const;  // ConfigError on out-of-range fields
};

// Key=value serialization (blobs under [blob<N>] sections). Round-trips
// exactly through Config.
Config spec_to_config(const SceneSpec& spec);
SceneSpec spec_from_config(Config& cfg);

struct GroundTruth {
    SceneSpec spec;
    std::vector<std::vector<PinholeCamera>> cams;  // [frame][view]
    std::vector<GaussianCloud> clouds;             // [frame], shared layout
    std::vector<std::vector<Image3d>> images;      // [frame][view]
    std::vector<std::vector<Imaged>> depths;
    std::vector<std::vector<Imaged>> alphas;
    std::vector<std::vector<FlowField>> clean_flows;  // [frame-1][view], t -> t+1
    std::vector<std::vector<FlowField>> flows;        // clean_flows + noise model
    std::vector<uint8_t> labels;                   // per-Gaussian dynamic flag

    int frames() const { return int(clouds.size()); }
    int views() const { return cams.empty() ? 0 : int(cams[0].size()); }
};

// Deterministic per seed, bit-identical on regeneration. Images, depths, and
// alphas are rasterizer outputs of the per-frame clouds; each flow pixel
// carries the projected motion of its maximum-weight contributor.
GroundTruth generate(const SceneSpec& spec, uint64_t seed);

// Flow-predictor error model: i.i.d. Gaussian noise of scale sigma on both
// components of every valid pixel, then a fraction of valid pixels replaced
// by uniform flows within +-width/4.
FlowField corrupt_flow(const FlowField& flow, double sigma, double outlier_frac, uint64_t seed);

// Training-facing view of a scene: what a capture rig plus flow predictor
// would hand the optimizer, with ground truth on the side for evaluation.
struct Dataset {
    SceneSpec spec;
    std::vector<std::vector<PinholeCamera>> cams;
    std::vector<std::vector<Image3d>> images;
    std::vector<std::vector<Imaged>> depths;
    std::vector<std::vector<FlowField>> flows;
    std::vector<std::vector<Vec3d>> gt_trajectories;  // [frame][gaussian]; may be empty
    std::vector<uint8_t> gt_labels;                   // may be empty

    int frames() const { return int(images.size()); }
    int views() const { return cams.empty() ? 0 : int(cams[0].size()); }
};

Dataset to_dataset(const GroundTruth& gt);  // lossless in-memory handoff

// Directory layout: cams/<frame>_<view>.txt, frames/<frame>/<view>.png,
// depth/<frame>/<view>.dpt, flow/<frame>/<view>.flo (forward, absent for the
// last frame), gt/trajectories.csv, gt/labels.csv, spec.cfg.
void write_dataset(const std::filesystem::path& dir, const GroundTruth& gt);
Dataset read_dataset(const std::filesystem::path& dir);

// Mean image-space endpoint error between the motion of reconstructed
// Gaussian centers (projected into each view) and reference flow at the
// pixel each center lands on. Gaussians projecting outside the image or
// onto invalid flow pixels are skipped; returns 0 when nothing qualifies.
double gaussian_flow_epe(const std::vector<GaussianCloud>& clouds,
                         const std::vector<std::vector<PinholeCamera>>& cams,
                         const std::vector<std::vector<FlowField>>& ref_flows);

}  // namespace fsp
