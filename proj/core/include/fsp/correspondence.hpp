#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fsp/camera.hpp"
#include "fsp/errors.hpp"
#include "fsp/gaussian.hpp"
#include "fsp/image.hpp"
#include "fsp/spatial_index.hpp"
#include "fsp/vecmath.hpp"

namespace fsp {

// Cross-dimensional correspondence: each foreground pixel of a rendered view
// is lifted to its composited 3D surface point and matched against the k
// nearest Gaussians, turning a 2D flow prior into per-Gaussian supervision.

struct Candidate {
    int32_t gaussian = -1;
    double phi = 0.0;     // 3D contribution of the Gaussian at the surface point
    double weight = 0.0;  // phi normalized by the max over the pixel's candidates
};

struct PixelCandidates {
    int32_t px = 0, py = 0;
    Vec3d point;  // unprojected surface point, world space
    std::vector<Candidate> candidates;
};

// A snapshot of matches for one view. `generation` records the cloud revision
// the search ran against; consumers reject the set once the cloud has been
// restructured (densify/prune) since then.
struct CandidateSet {
    uint64_t generation = 0;
    PinholeCamera camera;
    int k = 0;
    std::vector<PixelCandidates> pixels;
};

struct CorrespondenceOptions {
    int k = 4;
    double alpha_floor = 0.5;  // pixels with composited alpha below this are background
    int stride = 1;            // evaluate every stride-th pixel in x and y
};

// Match foreground pixels of a rendered view against the cloud that produced
// it. `depth` and `alpha` are the renderer's composited maps for `camera`.
inline CandidateSet foreground_search(const GaussianCloud& cloud, const PinholeCamera& camera,
                                      const Imaged& depth, const Imaged& alpha,
                                      const CorrespondenceOptions& opt = {}) {
    if (cloud.empty()) throw std::domain_error("foreground_search: empty cloud");
    if (opt.k <= 0) throw std::domain_error("foreground_search: k must be positive");
    if (opt.stride <= 0) throw std::domain_error("foreground_search: stride must be positive");
    if (depth.width() != camera.width || depth.height() != camera.height ||
        !depth.same_shape(alpha)) {
        throw std::domain_error("foreground_search: map shape does not match camera");
    }

    std::vector<Vec3d> centers(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) centers[i] = cloud.gaussians[i].center;
    SpatialIndex index(centers);

    CandidateSet set;
    set.generation = cloud.generation;
    set.camera = camera;
    set.k = opt.k;

    for (int py = 0; py < camera.height; py += opt.stride) {
        for (int px = 0; px < camera.width; px += opt.stride) {
            double a = alpha.at(px, py);
            double d = depth.at(px, py);
            if (!(a >= opt.alpha_floor) || !(d > 0.0)) continue;

            PixelCandidates pc;
            pc.px = px;
            pc.py = py;
            pc.point = unproject(camera, px + 0.5, py + 0.5, d);

            auto hits = index.nearest(pc.point, size_t(opt.k));
            double max_phi = 0.0;
            pc.candidates.reserve(hits.size());
            for (const auto& hit : hits) {
                double phi = contribution(cloud.gaussians[hit.index], pc.point);
                pc.candidates.push_back({hit.index, phi, 0.0});
                max_phi = std::max(max_phi, phi);
            }
            // all contributions underflowed: the pixel carries no usable
            // association, so it is dropped rather than given junk weights
            if (!(max_phi > 0.0)) continue;
            for (auto& c : pc.candidates) c.weight = c.phi / max_phi;
            set.pixels.push_back(std::move(pc));
        }
    }
    return set;
}

// Per-candidate predicted 2D flows. flows[i][j] pairs with
// set.pixels[i].candidates[j]; an empty entry means the Gaussian projected
// behind a camera and the candidate is skipped by downstream losses.
template <class T>
struct PredictedFlowSet {
    std::vector<std::vector<std::optional<Vec2<T>>>> flows;
};

// Project each candidate Gaussian's center at both times and difference the
// pixel positions. Both position spans must come from clouds at the exact
// revision the candidate set was built against.
template <class T>
PredictedFlowSet<T> predicted_flows(const CandidateSet& set, uint64_t generation_prev,
                                    std::span<const Vec3<T>> centers_prev,
                                    uint64_t generation_curr,
                                    std::span<const Vec3<T>> centers_curr,
                                    const PinholeCamera& cam_prev, const PinholeCamera& cam_curr) {
    if (generation_prev != set.generation || generation_curr != set.generation) {
        throw StaleCandidateError(
            "predicted_flows: candidate set was built against a different cloud revision");
    }
    if (centers_prev.size() != centers_curr.size()) {
        throw std::domain_error("predicted_flows: position count mismatch");
    }

    PredictedFlowSet<T> out;
    out.flows.resize(set.pixels.size());
    for (size_t i = 0; i < set.pixels.size(); ++i) {
        const auto& pc = set.pixels[i];
        auto& row = out.flows[i];
        row.resize(pc.candidates.size());
        for (size_t j = 0; j < pc.candidates.size(); ++j) {
            int32_t g = pc.candidates[j].gaussian;
            if (g < 0 || size_t(g) >= centers_curr.size()) {
                throw std::domain_error("predicted_flows: candidate index out of range");
            }
            auto p0 = project(cam_prev, centers_prev[g]);
            auto p1 = project(cam_curr, centers_curr[g]);
            if (!p0 || !p1) continue;
            row[j] = Vec2<T>{p1->u - p0->u, p1->v - p0->v};
        }
    }
    return out;
}

// Lift per-pixel dynamic maps to per-Gaussian flags: a Gaussian is dynamic
// when the best weight-credited map value over every view and pixel where it
// appears as a candidate reaches `tau_dyn`.
inline std::vector<uint8_t> lift_dynamic_mask(std::span<const CandidateSet> views,
                                              std::span<const Imaged> dynamic_maps,
                                              size_t gaussian_count, double tau_dyn = 0.3) {
    if (views.size() != dynamic_maps.size()) {
        throw std::domain_error("lift_dynamic_mask: views and maps differ in count");
    }
    std::vector<double> score(gaussian_count, 0.0);
    for (size_t v = 0; v < views.size(); ++v) {
        const CandidateSet& set = views[v];
        const Imaged& map = dynamic_maps[v];
        if (map.width() != set.camera.width || map.height() != set.camera.height) {
            throw std::domain_error("lift_dynamic_mask: map shape does not match view camera");
        }
        for (const auto& pc : set.pixels) {
            double d = map.at(pc.px, pc.py);
            for (const auto& c : pc.candidates) {
                if (c.gaussian < 0 || size_t(c.gaussian) >= gaussian_count) {
                    throw std::domain_error("lift_dynamic_mask: candidate index out of range");
                }
                score[c.gaussian] = std::max(score[c.gaussian], c.weight * d);
            }
        }
    }
    std::vector<uint8_t> mask(gaussian_count, 0);
    for (size_t i = 0; i < gaussian_count; ++i) mask[i] = score[i] >= tau_dyn ? 1 : 0;
    return mask;
}

}  // namespace fsp
