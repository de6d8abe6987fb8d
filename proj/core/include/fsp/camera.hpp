#pragma once

#include <optional>
#include <string>

#include "fsp/tape.hpp"
#include "fsp/vecmath.hpp"

namespace fsp {

// Right-handed coordinates, camera looks down +Z, image origin top-left,
// v grows downward. Pixel (ix, iy) is sampled at its center
// (ix + 0.5, iy + 0.5).
struct PinholeCamera {
    double fx = 1.0, fy = 1.0;
    double cx = 0.0, cy = 0.0;
    int width = 1, height = 1;
    Mat3d rotation = Mat3d::identity();  // world-to-camera
    Vec3d translation;                   // x_cam = R x_world + t

    static constexpr double kNearPlane = 1e-4;

    bool valid() const {
        return fx > 0.0 && fy > 0.0 && width >= 1 && height >= 1 && rotation_orthonormal();
    }
    bool rotation_orthonormal(double tol = 1e-9) const;

    Vec3d to_camera(const Vec3d& x_world) const { return rotation * x_world + translation; }
    Vec3d camera_center() const { return rotation.transposed() * (-translation); }

    // Camera built from eye/target; world up is used to fix roll. Image up
    // corresponds to world up.
    static PinholeCamera look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up,
                                 double fx, double fy, double cx, double cy, int w, int h);
};

template <class T>
struct ProjectedPoint {
    T u{}, v{};
    T depth{};  // camera-space Z, world units
};

// Perspective projection; empty when the point is at or behind the near
// plane (callers skip such Gaussians).
template <class T>
std::optional<ProjectedPoint<T>> project(const PinholeCamera& cam, const Vec3<T>& x_world) {
    Vec3<T> xc = {
        T(cam.rotation.m[0][0]) * x_world.x + T(cam.rotation.m[0][1]) * x_world.y +
            T(cam.rotation.m[0][2]) * x_world.z + T(cam.translation.x),
        T(cam.rotation.m[1][0]) * x_world.x + T(cam.rotation.m[1][1]) * x_world.y +
            T(cam.rotation.m[1][2]) * x_world.z + T(cam.translation.y),
        T(cam.rotation.m[2][0]) * x_world.x + T(cam.rotation.m[2][1]) * x_world.y +
            T(cam.rotation.m[2][2]) * x_world.z + T(cam.translation.z)};
    if (!(value_of(xc.z) > PinholeCamera::kNearPlane)) return std::nullopt;
    ProjectedPoint<T> p;
    p.u = T(cam.fx) * xc.x / xc.z + T(cam.cx);
    p.v = T(cam.fy) * xc.y / xc.z + T(cam.cy);
    p.depth = xc.z;
    return p;
}

// Inverse of project on its valid domain.
Vec3d unproject(const PinholeCamera& cam, double u, double v, double depth);

// 2D displacement between the projections of a point pair seen from a camera
// pair. Empty when either endpoint is behind its camera (skip, not fatal).
std::optional<Vec2d> flow_between(const PinholeCamera& cam_prev, const PinholeCamera& cam_curr,
                                  const Vec3d& x_prev, const Vec3d& x_curr);

// Plain-text camera record: one key per line (fx fy cx cy width height) plus
// the 12 entries of the 3x4 world-to-camera matrix, row-major.
std::string camera_to_text(const PinholeCamera& cam);
PinholeCamera camera_from_text(const std::string& text);
void save_camera(const std::string& path, const PinholeCamera& cam);
PinholeCamera load_camera(const std::string& path);

}  // namespace fsp
