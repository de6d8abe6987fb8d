#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fsp/rng.hpp"
#include "fsp/tape.hpp"
#include "fsp/vecmath.hpp"

namespace fsp {

// Multi-resolution factorized 4D feature volume: per resolution level, six 2D
// feature planes over the coordinate pairs (x,y), (x,z), (y,z), (x,t), (y,t),
// (z,t). A query bilinearly interpolates each plane, fuses the six features
// by elementwise product, and concatenates the per-level results.

struct HexPlaneLayout {
    int feature_dim = 8;
    std::vector<int> resolutions = {16, 32};
    Vec3d lo{-1.0, -1.0, -1.0};  // spatial box mapped to [0,1]^3
    Vec3d hi{1.0, 1.0, 1.0};
    double t0 = 0.0, t1 = 1.0;  // time range mapped to [0,1]

    // coordinate pair of each plane; 0..2 = x,y,z and 3 = t
    static constexpr int kPlanes = 6;
    static constexpr std::array<std::array<int, 2>, kPlanes> kAxes = {
        {{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}}};

    void validate() const {
        if (feature_dim <= 0) throw std::domain_error("HexPlaneLayout: feature_dim must be > 0");
        if (resolutions.empty()) throw std::domain_error("HexPlaneLayout: no resolution levels");
        for (int r : resolutions)
            if (r < 2) throw std::domain_error("HexPlaneLayout: resolutions must be >= 2");
        if (!(hi.x > lo.x) || !(hi.y > lo.y) || !(hi.z > lo.z) || !(t1 > t0)) {
            throw std::domain_error("HexPlaneLayout: degenerate bounds");
        }
    }

    size_t plane_size(int level) const {
        size_t r = size_t(resolutions[size_t(level)]);
        return r * r * size_t(feature_dim);
    }
    size_t level_size(int level) const { return plane_size(level) * kPlanes; }
    size_t level_offset(int level) const {
        size_t off = 0;
        for (int l = 0; l < level; ++l) off += level_size(l);
        return off;
    }
    size_t plane_offset(int level, int plane) const {
        return level_offset(level) + size_t(plane) * plane_size(level);
    }
    // node (i, j) indexes (first_axis, second_axis); features innermost
    size_t node_offset(int level, int plane, int i, int j, int f = 0) const {
        size_t r = size_t(resolutions[size_t(level)]);
        return plane_offset(level, plane) + (size_t(i) * r + size_t(j)) * size_t(feature_dim) +
               size_t(f);
    }
    size_t total_values() const { return level_offset(int(resolutions.size())); }
    size_t fused_dim() const { return size_t(feature_dim) * resolutions.size(); }
};

// Plane features start near one so the six-way product neither vanishes nor
// explodes before training shapes it.
inline std::vector<double> init_hexplane(const HexPlaneLayout& layout, Rng& rng,
                                         double jitter = 0.1) {
    layout.validate();
    std::vector<double> values(layout.total_values());
    for (double& v : values) v = 1.0 + rng.uniform(-jitter, jitter);
    return values;
}

namespace detail {
// Interpolation weights along one normalized axis of an R-node grid.
template <class T>
struct AxisSample {
    int i0 = 0;  // lower node, in [0, R-2]
    T frac{};    // blend toward node i0+1
};

template <class T>
AxisSample<T> sample_axis(const T& normalized, int resolution) {
    T g = normalized * double(resolution - 1);
    double gv = value_of(g);
    int i0 = int(std::floor(gv));
    if (i0 < 0) i0 = 0;
    if (i0 > resolution - 2) i0 = resolution - 2;
    return {i0, g - double(i0)};
}
}  // namespace detail

// Normalize a world coordinate into [0,1] with clamping (queries outside the
// box snap to the boundary, cutting the positional gradient there).
template <class T>
T normalize_coord(const T& v, double lo, double hi) {
    return clamp((v - lo) * (1.0 / (hi - lo)), 0.0, 1.0);
}

// Fused feature at (x, t); length feature_dim * levels.
template <class T>
std::vector<T> hexplane_query(const HexPlaneLayout& layout, std::span<const T> values,
                              const Vec3<T>& x, const T& t) {
    layout.validate();
    if (values.size() != layout.total_values()) {
        throw std::domain_error("hexplane_query: value buffer does not match layout");
    }
    std::array<T, 4> coord = {
        normalize_coord(x.x, layout.lo.x, layout.hi.x),
        normalize_coord(x.y, layout.lo.y, layout.hi.y),
        normalize_coord(x.z, layout.lo.z, layout.hi.z),
        normalize_coord(t, layout.t0, layout.t1),
    };

    const int F = layout.feature_dim;
    std::vector<T> out;
    out.reserve(layout.fused_dim());
    for (int level = 0; level < int(layout.resolutions.size()); ++level) {
        int r = layout.resolutions[size_t(level)];
        std::array<detail::AxisSample<T>, 4> axis = {
            detail::sample_axis(coord[0], r), detail::sample_axis(coord[1], r),
            detail::sample_axis(coord[2], r), detail::sample_axis(coord[3], r)};

        std::vector<T> fused(size_t(F), T(1.0));
        for (int plane = 0; plane < HexPlaneLayout::kPlanes; ++plane) {
            const auto [a, b] = HexPlaneLayout::kAxes[size_t(plane)];
            const auto& sa = axis[size_t(a)];
            const auto& sb = axis[size_t(b)];
            T wa1 = sa.frac, wb1 = sb.frac;
            T wa0 = 1.0 - sa.frac, wb0 = 1.0 - sb.frac;
            size_t o00 = layout.node_offset(level, plane, sa.i0, sb.i0);
            size_t o01 = layout.node_offset(level, plane, sa.i0, sb.i0 + 1);
            size_t o10 = layout.node_offset(level, plane, sa.i0 + 1, sb.i0);
            size_t o11 = layout.node_offset(level, plane, sa.i0 + 1, sb.i0 + 1);
            for (int f = 0; f < F; ++f) {
                T v = wa0 * (wb0 * values[o00 + size_t(f)] + wb1 * values[o01 + size_t(f)]) +
                      wa1 * (wb0 * values[o10 + size_t(f)] + wb1 * values[o11 + size_t(f)]);
                fused[size_t(f)] = fused[size_t(f)] * v;
            }
        }
        for (int f = 0; f < F; ++f) out.push_back(fused[size_t(f)]);
    }
    return out;
}

}  // namespace fsp
