#include "fsp/flow_io.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "fsp/fsio.hpp"

namespace fsp {
namespace {

constexpr float kFloMagic = 202021.25f;
constexpr float kUnknownFlow = 1e10f;       // written for invalid pixels
constexpr float kUnknownThreshold = 1e9f;   // read-side detection
constexpr char kDepthMagic[4] = {'D', 'P', 'T', 'H'};
constexpr uint32_t kDepthVersion = 1;

// Standard Middlebury color wheel: 55 hues spread over six color-pair arcs.
struct Wheel {
    static constexpr int kRY = 15, kYG = 6, kGC = 4, kCB = 11, kBM = 13, kMR = 6;
    static constexpr int kCols = kRY + kYG + kGC + kCB + kBM + kMR;  // 55
    std::array<Vec3d, kCols> color{};

    Wheel() {
        int k = 0;
        auto arc = [&](int n, const Vec3d& from, const Vec3d& to) {
            for (int i = 0; i < n; ++i, ++k) color[k] = from + (to - from) * (double(i) / n);
        };
        arc(kRY, {1, 0, 0}, {1, 1, 0});
        arc(kYG, {1, 1, 0}, {0, 1, 0});
        arc(kGC, {0, 1, 0}, {0, 1, 1});
        arc(kCB, {0, 1, 1}, {0, 0, 1});
        arc(kBM, {0, 0, 1}, {1, 0, 1});
        arc(kMR, {1, 0, 1}, {1, 0, 0});
    }
};

Vec3d wheel_color(double u, double v) {
    static const Wheel wheel;
    double rad = std::sqrt(u * u + v * v);  // caller pre-normalizes to [0, 1]
    double a = std::atan2(-v, -u) / std::numbers::pi;                  // [-1, 1]
    double fk = (a + 1.0) / 2.0 * (Wheel::kCols - 1);
    int k0 = int(std::floor(fk));
    int k1 = (k0 + 1) % Wheel::kCols;
    double f = fk - k0;
    Vec3d col = wheel.color[size_t(k0)] * (1.0 - f) + wheel.color[size_t(k1)] * f;
    // Increase saturation with magnitude: zero flow is pure white.
    return {1.0 - rad * (1.0 - col.x), 1.0 - rad * (1.0 - col.y), 1.0 - rad * (1.0 - col.z)};
}

}  // namespace

std::string encode_flo(const FlowField& flow) {
    std::string out;
    out.reserve(12 + flow.uv.size() * 8);
    bin::put_f32(out, kFloMagic);
    bin::put_i32(out, flow.width());
    bin::put_i32(out, flow.height());
    for (size_t i = 0; i < flow.uv.size(); ++i) {
        if (flow.valid[i]) {
            bin::put_f32(out, float(flow.uv[i].x));
            bin::put_f32(out, float(flow.uv[i].y));
        } else {
            bin::put_f32(out, kUnknownFlow);
            bin::put_f32(out, kUnknownFlow);
        }
    }
    return out;
}

FlowField decode_flo(std::string_view bytes) {
    bin::Reader in(bytes, "flo");
    if (in.f32() != kFloMagic) throw FormatError("flo: bad magic number");
    int32_t w = in.i32(), h = in.i32();
    if (w < 0 || h < 0 || (w > 0 && h > 0 && uint64_t(w) * uint64_t(h) > (1u << 26)))
        throw FormatError("flo: implausible dimensions");
    FlowField flow(w, h);
    for (size_t i = 0; i < flow.uv.size(); ++i) {
        float u = in.f32(), v = in.f32();
        flow.uv[i] = {double(u), double(v)};
        flow.valid[i] =
            (std::abs(u) < kUnknownThreshold && std::abs(v) < kUnknownThreshold) ? 1 : 0;
    }
    if (!in.done()) throw FormatError("flo: trailing bytes");
    return flow;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
    write_file_atomic(path, encode_flo(flow));
}

FlowField read_flo(const std::filesystem::path& path) {
    return decode_flo(read_file_bytes(path));
}

std::string encode_dpt(const Imaged& depth) {
    std::string out;
    out.reserve(16 + depth.size() * 4);
    out.append(kDepthMagic, 4);
    bin::put_u32(out, kDepthVersion);
    bin::put_i32(out, depth.width());
    bin::put_i32(out, depth.height());
    for (size_t i = 0; i < depth.size(); ++i) bin::put_f32(out, float(depth[i]));
    return out;
}

Imaged decode_dpt(std::string_view bytes) {
    bin::Reader in(bytes, "dpt");
    if (in.raw(4) != std::string_view(kDepthMagic, 4)) throw FormatError("dpt: bad magic");
    if (in.u32() != kDepthVersion) throw FormatError("dpt: unsupported version");
    int32_t w = in.i32(), h = in.i32();
    if (w < 0 || h < 0) throw FormatError("dpt: implausible dimensions");
    Imaged depth(w, h);
    for (size_t i = 0; i < depth.size(); ++i) depth[i] = double(in.f32());
    if (!in.done()) throw FormatError("dpt: trailing bytes");
    return depth;
}

void write_dpt(const std::filesystem::path& path, const Imaged& depth) {
    write_file_atomic(path, encode_dpt(depth));
}

Imaged read_dpt(const std::filesystem::path& path) {
    return decode_dpt(read_file_bytes(path));
}

Image3d flow_to_color(const FlowField& flow, double max_mag) {
    if (max_mag <= 0.0) {
        for (size_t i = 0; i < flow.uv.size(); ++i) {
            if (!flow.valid[i]) continue;
            const Vec2d& f = flow.uv[i];
            max_mag = std::max(max_mag, std::sqrt(f.x * f.x + f.y * f.y));
        }
        if (max_mag <= 0.0) max_mag = 1.0;
    }
    Image3d out(flow.width(), flow.height());
    for (size_t i = 0; i < flow.uv.size(); ++i) {
        if (!flow.valid[i]) {
            out[i] = {0.0, 0.0, 0.0};
            continue;
        }
        double u = flow.uv[i].x / max_mag, v = flow.uv[i].y / max_mag;
        double mag = std::sqrt(u * u + v * v);
        if (mag > 1.0) {  // saturate over-range flow at full saturation
            u /= mag;
            v /= mag;
        }
        out[i] = wheel_color(u, v);
    }
    return out;
}

}  // namespace fsp
