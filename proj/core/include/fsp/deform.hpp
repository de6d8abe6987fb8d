#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "fsp/camera.hpp"
#include "fsp/gaussian.hpp"
#include "fsp/hexplane.hpp"
#include "fsp/image.hpp"
#include "fsp/mlp.hpp"
#include "fsp/param.hpp"
#include "fsp/rasterizer.hpp"
#include "fsp/rng.hpp"

namespace fsp {

// Deformation backbone: a canonical cloud is carried to time t by decoding
// each Gaussian's spatio-temporal feature into center/rotation/scale offsets,
// plus a velocity head that decodes the same features (with temporal context)
// into an instantaneous 3D velocity.

namespace seg {
inline constexpr const char* kPlaneFeatures = "plane_features";
inline constexpr const char* kDeformTrunk = "deform_trunk";
inline constexpr const char* kHeadCenter = "head_center";
inline constexpr const char* kHeadRotation = "head_rotation";
inline constexpr const char* kHeadScale = "head_scale";
inline constexpr const char* kVelocityTrunk = "velocity_trunk";
inline constexpr const char* kVelocityHead = "velocity_head";
}  // namespace seg

struct DeformModel {
    HexPlaneLayout field;
    MlpLayout trunk;      // fused feature -> two tanh hidden layers
    MlpLayout head_mu;    // hidden -> 3 (center offset), zero-initialized
    MlpLayout head_q;     // hidden -> 4 (rotation offset), zero-initialized
    MlpLayout head_s;     // hidden -> 3 (log-scale offset), zero-initialized
    MlpLayout vel_trunk;  // (g_t, g_t-dt, g_t+dt) -> two tanh hidden layers
    MlpLayout vel_head;   // hidden -> 3 (velocity), zero-initialized

    std::vector<double> planes;
    std::vector<double> trunk_w, head_mu_w, head_q_w, head_s_w;
    std::vector<double> vel_trunk_w, vel_head_w;
};

inline DeformModel make_deform_model(const HexPlaneLayout& field, Rng& rng, int hidden = 64) {
    field.validate();
    if (hidden <= 0) throw std::domain_error("make_deform_model: hidden width must be positive");
    DeformModel m;
    m.field = field;
    int fused = int(field.fused_dim());
    m.trunk = {{fused, hidden, hidden}};
    m.head_mu = {{hidden, 3}};
    m.head_q = {{hidden, 4}};
    m.head_s = {{hidden, 3}};
    m.vel_trunk = {{3 * fused, hidden, hidden}};
    m.vel_head = {{hidden, 3}};

    m.planes = init_hexplane(field, rng);
    m.trunk_w = init_mlp(m.trunk, rng, false);
    m.head_mu_w = init_mlp(m.head_mu, rng, true);  // identity deformation at start
    m.head_q_w = init_mlp(m.head_q, rng, true);
    m.head_s_w = init_mlp(m.head_s, rng, true);
    m.vel_trunk_w = init_mlp(m.vel_trunk, rng, false);
    m.vel_head_w = init_mlp(m.vel_head, rng, true);  // v = 0 at start
    return m;
}

// Spans over one consistent parameter source (the model itself, or tape
// leaves laid out by add_deform_segments).
template <class T>
struct DeformParams {
    std::span<const T> planes;
    std::span<const T> trunk, head_mu, head_q, head_s;
    std::span<const T> vel_trunk, vel_head;
};

inline DeformParams<double> deform_params(const DeformModel& m) {
    return {m.planes, m.trunk_w, m.head_mu_w, m.head_q_w, m.head_s_w, m.vel_trunk_w,
            m.vel_head_w};
}

struct DeformLearningRates {
    double planes = 5e-3;
    double decoder = 1e-3;
    double velocity = 1e-3;
};

inline void add_deform_segments(ParamSet& params, const DeformModel& m,
                                const DeformLearningRates& lr = {}) {
    params.add_segment(seg::kPlaneFeatures, m.planes, lr.planes);
    params.add_segment(seg::kDeformTrunk, m.trunk_w, lr.decoder);
    params.add_segment(seg::kHeadCenter, m.head_mu_w, lr.decoder);
    params.add_segment(seg::kHeadRotation, m.head_q_w, lr.decoder);
    params.add_segment(seg::kHeadScale, m.head_s_w, lr.decoder);
    params.add_segment(seg::kVelocityTrunk, m.vel_trunk_w, lr.velocity);
    params.add_segment(seg::kVelocityHead, m.vel_head_w, lr.velocity);
}

template <class T>
DeformParams<T> deform_params_from(const ParamSet& params, std::span<const T> flat) {
    auto sub = [&](const char* name) {
        const ParamSegment& s = params.segment(name);
        return flat.subspan(s.offset, s.length);
    };
    return {sub(seg::kPlaneFeatures), sub(seg::kDeformTrunk), sub(seg::kHeadCenter),
            sub(seg::kHeadRotation), sub(seg::kHeadScale),    sub(seg::kVelocityTrunk),
            sub(seg::kVelocityHead)};
}

inline void params_to_deform(const ParamSet& params, DeformModel& m) {
    auto copy = [&](const char* name, std::vector<double>& dst) {
        auto v = params.view(name);
        if (v.size() != dst.size()) throw std::domain_error("params_to_deform: size mismatch");
        dst.assign(v.begin(), v.end());
    };
    copy(seg::kPlaneFeatures, m.planes);
    copy(seg::kDeformTrunk, m.trunk_w);
    copy(seg::kHeadCenter, m.head_mu_w);
    copy(seg::kHeadRotation, m.head_q_w);
    copy(seg::kHeadScale, m.head_s_w);
    copy(seg::kVelocityTrunk, m.vel_trunk_w);
    copy(seg::kVelocityHead, m.vel_head_w);
}

namespace detail {
// Trunk output is itself a hidden layer: activate it before the heads.
template <class T>
std::vector<T> activated_trunk(const MlpLayout& layout, std::span<const T> weights,
                               std::span<const T> input) {
    std::vector<T> h = mlp_forward(layout, weights, input);
    for (T& v : h) v = tanh(v);
    return h;
}
}  // namespace detail

// Carry one canonical Gaussian to the queried time. Offsets: center additive,
// rotation additive (consumers normalize when they build covariances, which
// keeps a zero offset bit-exact), scale additive in log space. Opacity and SH
// are not deformed.
template <class T>
Gaussian3T<T> deform_gaussian(const DeformModel& m, const DeformParams<T>& p,
                              const Gaussian3T<T>& canonical, std::span<const T> feature) {
    std::vector<T> h = detail::activated_trunk<T>(m.trunk, p.trunk, feature);
    std::vector<T> dmu = mlp_forward<T>(m.head_mu, p.head_mu, h);
    std::vector<T> dq = mlp_forward<T>(m.head_q, p.head_q, h);
    std::vector<T> ds = mlp_forward<T>(m.head_s, p.head_s, h);

    Gaussian3T<T> out = canonical;
    out.center = {canonical.center.x + dmu[0], canonical.center.y + dmu[1],
                  canonical.center.z + dmu[2]};
    out.rotation = {canonical.rotation.w + dq[0], canonical.rotation.x + dq[1],
                    canonical.rotation.y + dq[2], canonical.rotation.z + dq[3]};
    out.log_scale = {canonical.log_scale.x + ds[0], canonical.log_scale.y + ds[1],
                     canonical.log_scale.z + ds[2]};
    return out;
}

// Whole-cloud deformation at time t; each Gaussian is queried at its own
// canonical center.
template <class T>
std::vector<Gaussian3T<T>> deform_cloud(const DeformModel& m, const DeformParams<T>& p,
                                        std::span<const Gaussian3T<T>> canonical, double t) {
    std::vector<Gaussian3T<T>> out;
    out.reserve(canonical.size());
    for (const Gaussian3T<T>& g : canonical) {
        std::vector<T> feature = hexplane_query<T>(m.field, p.planes, g.center, T(t));
        out.push_back(deform_gaussian<T>(m, p, g, feature));
    }
    return out;
}

// Instantaneous velocity from temporally contextual features. Out-of-range
// neighbors (t - dt before the sequence start, t + dt past its end) reuse the
// center feature g_t.
template <class T>
Vec3<T> velocity_at(const DeformModel& m, const DeformParams<T>& p, const Vec3<T>& x, double t,
                    double dt) {
    std::vector<T> g_t = hexplane_query<T>(m.field, p.planes, x, T(t));
    std::vector<T> g_prev =
        t - dt < m.field.t0 ? g_t : hexplane_query<T>(m.field, p.planes, x, T(t - dt));
    std::vector<T> g_next =
        t + dt > m.field.t1 ? g_t : hexplane_query<T>(m.field, p.planes, x, T(t + dt));

    std::vector<T> input;
    input.reserve(3 * g_t.size());
    input.insert(input.end(), g_t.begin(), g_t.end());
    input.insert(input.end(), g_prev.begin(), g_prev.end());
    input.insert(input.end(), g_next.begin(), g_next.end());

    std::vector<T> h = detail::activated_trunk<T>(m.vel_trunk, p.vel_trunk, input);
    std::vector<T> v = mlp_forward<T>(m.vel_head, p.vel_head, h);
    return {v[0], v[1], v[2]};
}

// Velocities for a whole canonical cloud at time t.
template <class T>
std::vector<Vec3<T>> velocity_cloud(const DeformModel& m, const DeformParams<T>& p,
                                    std::span<const Gaussian3T<T>> canonical, double t,
                                    double dt) {
    std::vector<Vec3<T>> out;
    out.reserve(canonical.size());
    for (const Gaussian3T<T>& g : canonical) out.push_back(velocity_at<T>(m, p, g.center, t, dt));
    return out;
}

// Motion-saliency map from learned velocities: composite the per-Gaussian
// screen displacement magnitude |project(mu + v*dt) - project(mu)| with the
// renderer's weights, then normalize by the map's max. Both projections use
// the same camera, so pure camera motion contributes nothing.
inline Imaged refined_dynamic_map(const GaussianCloud& cloud, const PinholeCamera& cam,
                                  std::span<const Vec3d> velocities, double dt,
                                  const RenderOptions& options = {}, double eps = 1e-6) {
    if (velocities.size() != cloud.size()) {
        throw std::domain_error("refined_dynamic_map: velocity count mismatch");
    }
    std::vector<double> displacement(cloud.size(), 0.0);
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Vec3d& mu = cloud.gaussians[i].center;
        auto p0 = project(cam, mu);
        auto p1 = project(cam, mu + velocities[i] * dt);
        if (!p0 || !p1) continue;
        double du = p1->u - p0->u, dv = p1->v - p0->v;
        displacement[i] = std::sqrt(du * du + dv * dv);
    }
    Imaged map = render_velocity_map(cloud, cam, displacement, options);
    double max_v = 0.0;
    for (int y = 0; y < map.height(); ++y)
        for (int x = 0; x < map.width(); ++x) max_v = std::max(max_v, map.at(x, y));
    if (!(max_v > eps)) return Imaged(map.width(), map.height(), 0.0);
    for (int y = 0; y < map.height(); ++y)
        for (int x = 0; x < map.width(); ++x) map.at(x, y) /= max_v;
    return map;
}

}  // namespace fsp
