#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fsp/errors.hpp"
#include "fsp/tape.hpp"
#include "fsp/vecmath.hpp"

namespace fsp {

inline constexpr double kSh0 = 0.28209479177387814;  // Y_0^0
inline constexpr double kSh1 = 0.4886025119029199;   // |Y_1^m|

inline constexpr double kLogConfidenceMin = -6.907755278982137;  // log(1e-3)
inline constexpr double kLogConfidenceMax = 6.907755278982137;   // log(1e3)

// One anisotropic 3D Gaussian. Scale and opacity are kept in unconstrained
// form (log / logit) so optimizer steps and file roundtrips are exact; the
// accessors expose the constrained values (linear scale, opacity in [0,1]).
template <class T>
struct Gaussian3T {
    Vec3<T> center;
    Quat<T> rotation;        // unit length for stored clouds
    Vec3<T> log_scale;
    T opacity_logit{};
    std::vector<Vec3<T>> sh;  // 1 entry for degree 0, 4 for degree 1

    Vec3<T> scale() const { return {exp(log_scale.x), exp(log_scale.y), exp(log_scale.z)}; }
    T opacity() const { return sigmoid(opacity_logit); }
    int sh_degree() const { return sh.size() == 1 ? 0 : 1; }

    void set_scale(const Vec3d& s) {
        if (!(s.x > 0.0 && s.y > 0.0 && s.z > 0.0))
            throw std::domain_error("Gaussian scale components must be > 0");
        log_scale = {T(std::log(s.x)), T(std::log(s.y)), T(std::log(s.z))};
    }
    void set_opacity(double o) {
        if (!(o >= 0.0 && o <= 1.0)) throw std::domain_error("opacity must be in [0,1]");
        opacity_logit = T(std::log(o / (1.0 - o)));  // +-inf at the closed ends
    }
    void set_rotation(const Quatd& q) {
        Quatd n = q.normalized();
        rotation = {T(n.w), T(n.x), T(n.y), T(n.z)};
    }
};

using Gaussian3 = Gaussian3T<double>;

// Sigma = R diag(s) diag(s) R^T. Symmetric positive definite for s > 0.
template <class T>
Mat3<T> covariance_from(const Quat<T>& rotation, const Vec3<T>& scale) {
    if (!(value_of(scale.x) > 0.0 && value_of(scale.y) > 0.0 && value_of(scale.z) > 0.0))
        throw std::domain_error("covariance_from: scale components must be > 0");
    Mat3<T> r = rotation_matrix(rotation.normalized());
    // M = R diag(s); Sigma = M M^T
    Mat3<T> m;
    for (int i = 0; i < 3; ++i) {
        m.m[i][0] = r.m[i][0] * scale.x;
        m.m[i][1] = r.m[i][1] * scale.y;
        m.m[i][2] = r.m[i][2] * scale.z;
    }
    return m * m.transposed();
}

// Contribution of a Gaussian at a world point: opacity-weighted unnormalized
// density with the precision matrix in the quadratic form. Never reaches zero
// for positive opacity (infinite extent).
template <class T>
T contribution(const Gaussian3T<T>& g, const Vec3<T>& x) {
    Mat3<T> sigma = covariance_from(g.rotation, g.scale());
    Vec3<T> d = x - g.center;
    Vec3<T> sd = sigma.inverse() * d;
    return g.opacity() * exp(T(-0.5) * d.dot(sd));
}

// View-dependent RGB from spherical harmonics, degrees 0 and 1.
// Convention: color = kSh0 * sh[0] + 0.5 (+ degree-1 terms), clamped to [0,1].
template <class T>
Vec3<T> sh_to_color(const std::vector<Vec3<T>>& sh, const Vec3<T>& view_dir) {
    if (sh.size() != 1 && sh.size() != 4)
        throw ConfigError("sh_to_color: only degrees 0 and 1 are supported");
    Vec3<T> c = sh[0] * T(kSh0);
    if (sh.size() == 4) {
        c += sh[1] * (T(-kSh1) * view_dir.y);
        c += sh[2] * (T(kSh1) * view_dir.z);
        c += sh[3] * (T(-kSh1) * view_dir.x);
    }
    return {clamp(c.x + T(0.5), 0.0, 1.0), clamp(c.y + T(0.5), 0.0, 1.0),
            clamp(c.z + T(0.5), 0.0, 1.0)};
}

// Ordered Gaussian collection plus optional per-Gaussian annotations shared
// by the training loop. Mutation is single-writer; the generation counter is
// bumped on every structural change so stale readers can be detected.
struct GaussianCloud {
    std::vector<Gaussian3> gaussians;
    std::vector<uint8_t> dynamic_flags;           // empty or one entry per Gaussian
    std::vector<std::vector<double>> log_confidence;  // [gaussian][view], clamped log-space
    uint64_t generation = 0;

    size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }

    void bump_generation() { ++generation; }

    bool flags_consistent() const {
        return dynamic_flags.empty() || dynamic_flags.size() == gaussians.size();
    }

    // Learnable per-view confidence c(d), stored in clamped log space.
    void register_views(size_t num_views) {
        log_confidence.assign(gaussians.size(), std::vector<double>(num_views, 0.0));
    }
    size_t num_views() const { return log_confidence.empty() ? 0 : log_confidence[0].size(); }

    Vec3d center_of(size_t i) const { return gaussians[i].center; }
};

inline double confidence_from_log(double log_c) {
    return std::exp(clamp(log_c, kLogConfidenceMin, kLogConfidenceMax));
}
inline Var confidence_from_log(const Var& log_c) {
    return exp(clamp(log_c, kLogConfidenceMin, kLogConfidenceMax));
}

}  // namespace fsp
