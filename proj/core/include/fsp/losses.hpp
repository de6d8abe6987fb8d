#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fsp/camera.hpp"
#include "fsp/correspondence.hpp"
#include "fsp/errors.hpp"
#include "fsp/image.hpp"
#include "fsp/tape.hpp"
#include "fsp/vecmath.hpp"

namespace fsp {

// ---------------------------------------------------------------------------
// Dynamic map: per-pixel motion saliency derived from a prior flow field.
// D = |F| / max|F| over valid pixels; degenerate (near-static) fields and
// invalid pixels map to 0.
inline Imaged dynamic_map_from_flow(const FlowField& flow, double eps = 1e-6) {
    Imaged map(flow.uv.width(), flow.uv.height(), 0.0);
    double max_mag = 0.0;
    for (int y = 0; y < flow.uv.height(); ++y) {
        for (int x = 0; x < flow.uv.width(); ++x) {
            if (!flow.valid.at(x, y)) continue;
            const Vec2d& f = flow.uv.at(x, y);
            if (!std::isfinite(f.x) || !std::isfinite(f.y)) continue;
            max_mag = std::max(max_mag, std::sqrt(f.x * f.x + f.y * f.y));
        }
    }
    if (!(max_mag > eps)) return map;
    for (int y = 0; y < flow.uv.height(); ++y) {
        for (int x = 0; x < flow.uv.width(); ++x) {
            if (!flow.valid.at(x, y)) continue;
            const Vec2d& f = flow.uv.at(x, y);
            if (!std::isfinite(f.x) || !std::isfinite(f.y)) continue;
            map.at(x, y) = std::sqrt(f.x * f.x + f.y * f.y) / max_mag;
        }
    }
    return map;
}

// ---------------------------------------------------------------------------
// Dynamic-aware color loss: a plain MSE blended with an MSE re-weighted by
// the dynamic map, so moving regions keep pressure even when they cover few
// pixels. With a uniform map of ones the two terms coincide.
template <class T>
T color_loss_dynamic(const Image<Vec3<T>>& rendered, const Image3d& target, const Imaged& dynamic_map,
                     double lambda_c = 0.5) {
    if (!rendered.same_shape(target) || !rendered.same_shape(dynamic_map)) {
        throw std::domain_error("color_loss_dynamic: image shapes differ");
    }
    const size_t n = size_t(rendered.width()) * size_t(rendered.height());
    if (n == 0) throw std::domain_error("color_loss_dynamic: empty images");

    std::vector<T> plain, masked;
    plain.reserve(n * 3);
    masked.reserve(n * 3);
    for (int y = 0; y < rendered.height(); ++y) {
        for (int x = 0; x < rendered.width(); ++x) {
            const Vec3<T>& c = rendered.at(x, y);
            const Vec3d& g = target.at(x, y);
            double d = dynamic_map.at(x, y);
            T dr = c.x - g.x, dg = c.y - g.y, db = c.z - g.z;
            plain.push_back(dr * dr);
            plain.push_back(dg * dg);
            plain.push_back(db * db);
            masked.push_back(d * dr * dr);
            masked.push_back(d * dg * dg);
            masked.push_back(d * db * db);
        }
    }
    double inv = 1.0 / double(n * 3);
    return (1.0 - lambda_c) * (sum(std::span<const T>(plain)) * inv) +
           lambda_c * (sum(std::span<const T>(masked)) * inv);
}

// ---------------------------------------------------------------------------
// Uncertainty-aware flow loss. Each candidate contributes a Gaussian negative
// log-likelihood of the prior flow under the predicted flow, with inverse
// variance weight * confidence: 0.5*|F - Fhat|^2 * w * c - 0.5*log(w * c).
// Reduced as the mean over every counted (pixel, candidate) pair.
//
// `confidence` holds one positive value per Gaussian for this view (shared
// scalars may repeat the same tape node). Skipped and therefore uncounted:
// pixels whose prior is invalid or non-finite, and candidates without a
// predicted flow.
template <class T>
T flow_loss_kl(const FlowField& prior, const CandidateSet& set, const PredictedFlowSet<T>& pred,
               std::span<const T> confidence, size_t* counted = nullptr) {
    if (prior.uv.width() != set.camera.width || prior.uv.height() != set.camera.height) {
        throw std::domain_error("flow_loss_kl: prior shape does not match view");
    }
    if (pred.flows.size() != set.pixels.size()) {
        throw std::domain_error("flow_loss_kl: prediction set does not match candidate set");
    }

    std::vector<T> terms;
    for (size_t i = 0; i < set.pixels.size(); ++i) {
        const PixelCandidates& pc = set.pixels[i];
        if (!prior.valid.at(pc.px, pc.py)) continue;
        const Vec2d& f = prior.uv.at(pc.px, pc.py);
        if (!std::isfinite(f.x) || !std::isfinite(f.y)) continue;
        if (pred.flows[i].size() != pc.candidates.size()) {
            throw std::domain_error("flow_loss_kl: prediction row does not match candidates");
        }
        for (size_t j = 0; j < pc.candidates.size(); ++j) {
            if (!pred.flows[i][j]) continue;
            const Candidate& cand = pc.candidates[j];
            if (cand.gaussian < 0 || size_t(cand.gaussian) >= confidence.size()) {
                throw std::domain_error("flow_loss_kl: candidate index out of range");
            }
            const Vec2<T>& fhat = *pred.flows[i][j];
            T du = fhat.x - f.x;
            T dv = fhat.y - f.y;
            T inv_var = cand.weight * confidence[cand.gaussian];
            terms.push_back(0.5 * ((du * du + dv * dv) * inv_var) - 0.5 * log(inv_var));
        }
    }
    if (counted) *counted = terms.size();
    if (terms.empty()) return T(0.0);
    return sum(std::span<const T>(terms)) * (1.0 / double(terms.size()));
}

// Plain-L1 variant over the same selection of (pixel, candidate) items as
// flow_loss_kl, with no confidence weighting. Ablation baseline.
template <class T>
T flow_loss_l1(const FlowField& prior, const CandidateSet& set, const PredictedFlowSet<T>& pred,
               size_t* counted = nullptr) {
    if (prior.uv.width() != set.camera.width || prior.uv.height() != set.camera.height) {
        throw std::domain_error("flow_loss_l1: prior shape does not match view");
    }
    if (pred.flows.size() != set.pixels.size()) {
        throw std::domain_error("flow_loss_l1: prediction set does not match candidate set");
    }

    std::vector<T> terms;
    for (size_t i = 0; i < set.pixels.size(); ++i) {
        const PixelCandidates& pc = set.pixels[i];
        if (!prior.valid.at(pc.px, pc.py)) continue;
        const Vec2d& f = prior.uv.at(pc.px, pc.py);
        if (!std::isfinite(f.x) || !std::isfinite(f.y)) continue;
        if (pred.flows[i].size() != pc.candidates.size()) {
            throw std::domain_error("flow_loss_l1: prediction row does not match candidates");
        }
        for (size_t j = 0; j < pc.candidates.size(); ++j) {
            if (!pred.flows[i][j]) continue;
            const Vec2<T>& fhat = *pred.flows[i][j];
            terms.push_back(abs(fhat.x - f.x) + abs(fhat.y - f.y));
        }
    }
    if (counted) *counted = terms.size();
    if (terms.empty()) return T(0.0);
    return sum(std::span<const T>(terms)) * (1.0 / double(terms.size()));
}

// ---------------------------------------------------------------------------
// Local rigidity: for each dynamic Gaussian and its m nearest dynamic
// neighbors (selected at the previous time), penalize change of the relative
// displacement between the two times.

// Neighbor lists from previous-frame centers; neighbors[i] is empty for
// static Gaussians and holds up to m dynamic indices j != i otherwise.
inline std::vector<std::vector<int32_t>> dynamic_neighbors(std::span<const Vec3d> centers_prev,
                                                           std::span<const uint8_t> dynamic_mask,
                                                           int m = 8) {
    if (centers_prev.size() != dynamic_mask.size()) {
        throw std::domain_error("dynamic_neighbors: mask size mismatch");
    }
    if (m <= 0) throw std::domain_error("dynamic_neighbors: m must be positive");

    std::vector<int32_t> dyn;
    for (size_t i = 0; i < dynamic_mask.size(); ++i)
        if (dynamic_mask[i]) dyn.push_back(int32_t(i));

    std::vector<std::vector<int32_t>> neighbors(centers_prev.size());
    if (dyn.size() < 2) return neighbors;

    std::vector<Vec3d> dyn_centers(dyn.size());
    for (size_t i = 0; i < dyn.size(); ++i) dyn_centers[i] = centers_prev[dyn[i]];
    SpatialIndex index(dyn_centers);
    for (size_t i = 0; i < dyn.size(); ++i) {
        auto hits = index.nearest(dyn_centers[i], size_t(m) + 1);  // +1: self comes back too
        auto& list = neighbors[dyn[i]];
        for (const auto& hit : hits) {
            if (dyn[hit.index] == dyn[i]) continue;
            list.push_back(dyn[hit.index]);
            if (list.size() == size_t(m)) break;
        }
    }
    return neighbors;
}

// Mean over all (i, j in neighbors[i]) of
// |(mu_i,t - mu_j,t) - (mu_i,t-1 - mu_j,t-1)|^2. No pairs -> 0.
template <class T>
T physical_loss(std::span<const Vec3<T>> centers_curr, std::span<const Vec3<T>> centers_prev,
                const std::vector<std::vector<int32_t>>& neighbors) {
    if (centers_curr.size() != centers_prev.size() || neighbors.size() != centers_curr.size()) {
        throw std::domain_error("physical_loss: size mismatch");
    }
    std::vector<T> terms;
    for (size_t i = 0; i < neighbors.size(); ++i) {
        for (int32_t j : neighbors[i]) {
            Vec3<T> rel_curr = centers_curr[i] - centers_curr[size_t(j)];
            Vec3<T> rel_prev = centers_prev[i] - centers_prev[size_t(j)];
            Vec3<T> d = rel_curr - rel_prev;
            terms.push_back(d.x * d.x + d.y * d.y + d.z * d.z);
        }
    }
    if (terms.empty()) return T(0.0);
    return sum(std::span<const T>(terms)) * (1.0 / double(terms.size()));
}

// ---------------------------------------------------------------------------
// Velocity alignment for the transient velocity injector: screen-space
// displacement implied by a Gaussian's velocity over one frame interval,
// matched to the prior flow at the pixel that credits the Gaussian most.

template <class T>
struct VelocityAlignmentItems {
    std::vector<int32_t> gaussian;    // selected Gaussian per item
    std::vector<Vec2<T>> predicted;   // project_next(mu + v*dt) - project(mu)
    std::vector<Vec2d> prior;         // prior flow at the crediting pixel
};

// Selection: every Gaussian appearing as a candidate at a pixel whose prior
// flow is usable. The crediting pixel is the one with the largest candidate
// weight (first such pixel on ties). Items whose projections fail are
// dropped.
template <class T>
VelocityAlignmentItems<T> velocity_alignment_items(const CandidateSet& set, const FlowField& prior,
                                                   uint64_t generation,
                                                   const PinholeCamera& cam_next,
                                                   std::span<const Vec3<T>> centers,
                                                   std::span<const Vec3<T>> velocities, double dt) {
    if (generation != set.generation) {
        throw StaleCandidateError(
            "velocity_alignment_items: candidate set was built against a different cloud revision");
    }
    if (centers.size() != velocities.size()) {
        throw std::domain_error("velocity_alignment_items: velocity count mismatch");
    }
    if (prior.uv.width() != set.camera.width || prior.uv.height() != set.camera.height) {
        throw std::domain_error("velocity_alignment_items: prior shape does not match view");
    }

    struct Credit {
        double weight = -1.0;
        Vec2d flow;
    };
    std::vector<Credit> credit(centers.size());
    for (const PixelCandidates& pc : set.pixels) {
        if (!prior.valid.at(pc.px, pc.py)) continue;
        const Vec2d& f = prior.uv.at(pc.px, pc.py);
        if (!std::isfinite(f.x) || !std::isfinite(f.y)) continue;
        for (const Candidate& c : pc.candidates) {
            if (c.gaussian < 0 || size_t(c.gaussian) >= centers.size()) {
                throw std::domain_error("velocity_alignment_items: candidate index out of range");
            }
            if (c.weight > credit[c.gaussian].weight) credit[c.gaussian] = {c.weight, f};
        }
    }

    // The displaced center projects into the next frame's camera and the
    // original into the selection camera, mirroring predicted_flows: the
    // prediction is then directly comparable with the prior flow, and a zero
    // velocity already explains pure camera-induced flow.
    VelocityAlignmentItems<T> items;
    for (size_t g = 0; g < centers.size(); ++g) {
        if (credit[g].weight < 0.0) continue;
        Vec3<T> moved = {centers[g].x + velocities[g].x * dt, centers[g].y + velocities[g].y * dt,
                         centers[g].z + velocities[g].z * dt};
        auto p0 = project(set.camera, centers[g]);
        auto p1 = project(cam_next, moved);
        if (!p0 || !p1) continue;
        items.gaussian.push_back(int32_t(g));
        items.predicted.push_back({p1->u - p0->u, p1->v - p0->v});
        items.prior.push_back(credit[g].flow);
    }
    return items;
}

// Mean L1 over the selected items; empty selection contributes 0 (callers
// log a warning when that happens).
template <class T>
T velocity_alignment(const VelocityAlignmentItems<T>& items) {
    if (items.predicted.empty()) return T(0.0);
    std::vector<T> terms;
    terms.reserve(items.predicted.size());
    for (size_t i = 0; i < items.predicted.size(); ++i) {
        T du = items.predicted[i].x - items.prior[i].x;
        T dv = items.predicted[i].y - items.prior[i].y;
        terms.push_back(abs(du) + abs(dv));
    }
    return sum(std::span<const T>(terms)) * (1.0 / double(terms.size()));
}

// ---------------------------------------------------------------------------
// Flow-weight schedule: linear warmup from 0 to lambda_max, then cosine decay
// to lambda_min_fraction * lambda_max, constant afterwards.
struct LambdaSchedule {
    double lambda_max = 0.1;
    double lambda_min_fraction = 0.01;
    int warmup_end = 0;  // iteration where the peak is reached
    int decay_end = 0;   // iteration where the floor is reached

    double at(int iter) const {
        if (warmup_end < 0 || decay_end < warmup_end) {
            throw std::domain_error("LambdaSchedule: need 0 <= warmup_end <= decay_end");
        }
        double lambda_min = lambda_min_fraction * lambda_max;
        if (iter <= 0 && warmup_end > 0) return 0.0;
        if (iter < warmup_end) return lambda_max * double(iter) / double(warmup_end);
        if (iter == warmup_end) return lambda_max;  // peak is exact, not 1-ulp off
        if (iter >= decay_end) return lambda_min;
        double u = double(iter - warmup_end) / double(decay_end - warmup_end);
        return lambda_min + 0.5 * (lambda_max - lambda_min) * (1.0 + std::cos(u * 3.14159265358979323846));
    }
};

// ---------------------------------------------------------------------------
// Total objectives.
template <class T>
struct LossTerms {
    T color{};
    T flow{};
    T physical{};
    T velocity{};
};

template <class T>
T total_loss_iterative(const LossTerms<T>& t, double lambda_p, double lambda_f) {
    return t.color + lambda_p * t.physical + lambda_f * t.flow;
}

template <class T>
T total_loss_deform(const LossTerms<T>& t, double lambda_f) {
    return t.color + lambda_f * (t.flow + t.velocity);
}

}  // namespace fsp
