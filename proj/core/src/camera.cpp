#include "fsp/camera.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fsp/errors.hpp"

namespace fsp {

bool PinholeCamera::rotation_orthonormal(double tol) const {
    Mat3d rrt = rotation * rotation.transposed();
    Mat3d id = Mat3d::identity();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (std::abs(rrt.m[i][j] - id.m[i][j]) > tol) return false;
    return true;
}

PinholeCamera PinholeCamera::look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up,
                                     double fx, double fy, double cx, double cy, int w, int h) {
    Vec3d forward = (target - eye).normalized();
    Vec3d right = forward.cross(up).normalized();
    Vec3d down = forward.cross(right);  // right x down = forward
    PinholeCamera cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = cx;
    cam.cy = cy;
    cam.width = w;
    cam.height = h;
    cam.rotation = Mat3d::from_rows(right, down, forward);
    cam.translation = -(cam.rotation * eye);
    return cam;
}

Vec3d unproject(const PinholeCamera& cam, double u, double v, double depth) {
    if (!(depth > 0.0)) throw std::domain_error("unproject: depth must be > 0");
    Vec3d xc{(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth};
    return cam.rotation.transposed() * (xc - cam.translation);
}

std::optional<Vec2d> flow_between(const PinholeCamera& cam_prev, const PinholeCamera& cam_curr,
                                  const Vec3d& x_prev, const Vec3d& x_curr) {
    auto p0 = project(cam_prev, x_prev);
    auto p1 = project(cam_curr, x_curr);
    if (!p0 || !p1) return std::nullopt;
    return Vec2d{p1->u - p0->u, p1->v - p0->v};
}

std::string camera_to_text(const PinholeCamera& cam) {
    char buf[512];
    std::string s;
    auto kv = [&](const char* k, double v) {
        std::snprintf(buf, sizeof(buf), "%s %.17g\n", k, v);
        s += buf;
    };
    kv("fx", cam.fx);
    kv("fy", cam.fy);
    kv("cx", cam.cx);
    kv("cy", cam.cy);
    std::snprintf(buf, sizeof(buf), "width %d\nheight %d\nw2c", cam.width, cam.height);
    s += buf;
    const Mat3d& r = cam.rotation;
    const double row_t[3] = {cam.translation.x, cam.translation.y, cam.translation.z};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            std::snprintf(buf, sizeof(buf), " %.17g", r.m[i][j]);
            s += buf;
        }
        std::snprintf(buf, sizeof(buf), " %.17g", row_t[i]);
        s += buf;
    }
    s += "\n";
    return s;
}

PinholeCamera camera_from_text(const std::string& text) {
    PinholeCamera cam;
    std::istringstream in(text);
    std::string key;
    bool have_w2c = false;
    while (in >> key) {
        if (key == "fx") in >> cam.fx;
        else if (key == "fy") in >> cam.fy;
        else if (key == "cx") in >> cam.cx;
        else if (key == "cy") in >> cam.cy;
        else if (key == "width") in >> cam.width;
        else if (key == "height") in >> cam.height;
        else if (key == "w2c") {
            double v[12];
            for (double& x : v)
                if (!(in >> x)) throw FormatError("camera record: truncated w2c matrix");
            cam.rotation = Mat3d::from_rows({v[0], v[1], v[2]}, {v[4], v[5], v[6]}, {v[8], v[9], v[10]});
            cam.translation = {v[3], v[7], v[11]};
            have_w2c = true;
        } else {
            throw FormatError("camera record: unknown key '" + key + "'");
        }
    }
    if (!have_w2c) throw FormatError("camera record: missing w2c matrix");
    if (!cam.valid()) throw FormatError("camera record: invalid camera parameters");
    return cam;
}

void save_camera(const std::string& path, const PinholeCamera& cam) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open camera file for writing: " + path);
    f << camera_to_text(cam);
}

PinholeCamera load_camera(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open camera file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return camera_from_text(ss.str());
}

}  // namespace fsp
