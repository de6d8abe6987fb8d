#include "fsp/checkpoint.hpp"

#include "fsp/fsio.hpp"

namespace fsp {
namespace {

constexpr char kMagic[8] = {'F', 'S', 'P', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;

constexpr uint32_t kHasFrames = 1u << 0;
constexpr uint32_t kHasDeform = 1u << 1;

void put_string(std::string& out, std::string_view s) {
    bin::put_u64(out, s.size());
    out.append(s);
}

std::string get_string(bin::Reader& in) {
    uint64_t n = in.u64();
    return std::string(in.raw(size_t(n)));
}

void put_doubles(std::string& out, std::span<const double> v) {
    bin::put_u64(out, v.size());
    for (double x : v) bin::put_f64(out, x);
}

std::vector<double> get_doubles(bin::Reader& in) {
    uint64_t n = in.u64();
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = in.f64();
    return v;
}

void put_ints(std::string& out, std::span<const int> v) {
    bin::put_u64(out, v.size());
    for (int x : v) bin::put_i32(out, x);
}

std::vector<int> get_ints(bin::Reader& in) {
    uint64_t n = in.u64();
    std::vector<int> v(static_cast<size_t>(n));
    for (int& x : v) x = in.i32();
    return v;
}

void put_cloud(std::string& out, const GaussianCloud& cloud) {
    bin::put_u64(out, cloud.size());
    bin::put_u64(out, cloud.generation);
    for (const Gaussian3& g : cloud.gaussians) {
        bin::put_u32(out, uint32_t(g.sh.size()));
        bin::put_f64(out, g.center.x);
        bin::put_f64(out, g.center.y);
        bin::put_f64(out, g.center.z);
        bin::put_f64(out, g.rotation.w);
        bin::put_f64(out, g.rotation.x);
        bin::put_f64(out, g.rotation.y);
        bin::put_f64(out, g.rotation.z);
        bin::put_f64(out, g.log_scale.x);
        bin::put_f64(out, g.log_scale.y);
        bin::put_f64(out, g.log_scale.z);
        bin::put_f64(out, g.opacity_logit);
        for (const Vec3d& c : g.sh) {
            bin::put_f64(out, c.x);
            bin::put_f64(out, c.y);
            bin::put_f64(out, c.z);
        }
    }
    bin::put_u64(out, cloud.dynamic_flags.size());
    out.append(reinterpret_cast<const char*>(cloud.dynamic_flags.data()),
               cloud.dynamic_flags.size());
    bin::put_u64(out, cloud.num_views());
    for (const std::vector<double>& row : cloud.log_confidence)
        for (double v : row) bin::put_f64(out, v);
}

GaussianCloud get_cloud(bin::Reader& in) {
    GaussianCloud cloud;
    uint64_t count = in.u64();
    cloud.generation = in.u64();
    cloud.gaussians.resize(size_t(count));
    for (Gaussian3& g : cloud.gaussians) {
        uint32_t coeffs = in.u32();
        if (coeffs != 1 && coeffs != 4)
            throw FormatError("checkpoint: unsupported SH coefficient count");
        g.center = {in.f64(), in.f64(), in.f64()};
        g.rotation = {in.f64(), in.f64(), in.f64(), in.f64()};
        g.log_scale = {in.f64(), in.f64(), in.f64()};
        g.opacity_logit = in.f64();
        g.sh.resize(coeffs);
        for (Vec3d& c : g.sh) c = {in.f64(), in.f64(), in.f64()};
    }
    uint64_t flags = in.u64();
    if (flags != 0 && flags != count) throw FormatError("checkpoint: dynamic flag count mismatch");
    std::string_view raw = in.raw(size_t(flags));
    cloud.dynamic_flags.assign(raw.begin(), raw.end());
    uint64_t views = in.u64();
    if (views > 0) {
        cloud.log_confidence.assign(size_t(count), std::vector<double>(size_t(views)));
        for (std::vector<double>& row : cloud.log_confidence)
            for (double& v : row) v = in.f64();
    }
    return cloud;
}

void put_deform(std::string& out, const DeformModel& m) {
    bin::put_i32(out, m.field.feature_dim);
    put_ints(out, m.field.resolutions);
    for (double v : {m.field.lo.x, m.field.lo.y, m.field.lo.z, m.field.hi.x, m.field.hi.y,
                     m.field.hi.z, m.field.t0, m.field.t1})
        bin::put_f64(out, v);
    for (const MlpLayout* l :
         {&m.trunk, &m.head_mu, &m.head_q, &m.head_s, &m.vel_trunk, &m.vel_head})
        put_ints(out, l->widths);
    for (const std::vector<double>* w : {&m.planes, &m.trunk_w, &m.head_mu_w, &m.head_q_w,
                                         &m.head_s_w, &m.vel_trunk_w, &m.vel_head_w})
        put_doubles(out, *w);
}

DeformModel get_deform(bin::Reader& in) {
    DeformModel m;
    m.field.feature_dim = in.i32();
    m.field.resolutions = get_ints(in);
    m.field.lo = {in.f64(), in.f64(), in.f64()};
    m.field.hi = {in.f64(), in.f64(), in.f64()};
    m.field.t0 = in.f64();
    m.field.t1 = in.f64();
    for (MlpLayout* l : {&m.trunk, &m.head_mu, &m.head_q, &m.head_s, &m.vel_trunk, &m.vel_head})
        l->widths = get_ints(in);
    for (std::vector<double>* w : {&m.planes, &m.trunk_w, &m.head_mu_w, &m.head_q_w, &m.head_s_w,
                                   &m.vel_trunk_w, &m.vel_head_w})
        *w = get_doubles(in);

    // Validate the manifest before the weights are used anywhere.
    m.field.validate();
    if (m.planes.size() != m.field.total_values())
        throw FormatError("checkpoint: plane value count does not match the manifest");
    const std::pair<const MlpLayout*, const std::vector<double>*> nets[] = {
        {&m.trunk, &m.trunk_w},         {&m.head_mu, &m.head_mu_w},
        {&m.head_q, &m.head_q_w},       {&m.head_s, &m.head_s_w},
        {&m.vel_trunk, &m.vel_trunk_w}, {&m.vel_head, &m.vel_head_w}};
    for (const auto& [layout, weights] : nets) {
        layout->validate();
        if (weights->size() != layout->weight_count())
            throw FormatError("checkpoint: decoder weight count does not match the manifest");
    }
    return m;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string out;
    out.append(kMagic, 8);
    bin::put_u32(out, kVersion);
    uint32_t flags = 0;
    if (!ckpt.frame_clouds.empty()) flags |= kHasFrames;
    if (ckpt.deform.has_value()) flags |= kHasDeform;
    bin::put_u32(out, flags);
    put_string(out, ckpt.config_text);
    put_cloud(out, ckpt.cloud);
    if (!ckpt.frame_clouds.empty()) {
        bin::put_u64(out, ckpt.frame_clouds.size());
        for (const GaussianCloud& c : ckpt.frame_clouds) put_cloud(out, c);
    }
    if (ckpt.deform.has_value()) put_deform(out, *ckpt.deform);
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    bin::Reader in(bytes, "checkpoint");
    if (in.raw(8) != std::string_view(kMagic, 8)) throw FormatError("checkpoint: bad magic");
    uint32_t version = in.u32();
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version) +
                          " (expected " + std::to_string(kVersion) + ")");
    uint32_t flags = in.u32();
    Checkpoint ckpt;
    ckpt.config_text = get_string(in);
    ckpt.cloud = get_cloud(in);
    if (flags & kHasFrames) {
        uint64_t n = in.u64();
        ckpt.frame_clouds.resize(size_t(n));
        for (GaussianCloud& c : ckpt.frame_clouds) c = get_cloud(in);
    }
    if (flags & kHasDeform) ckpt.deform = get_deform(in);
    if (!in.done()) throw FormatError("checkpoint: trailing bytes");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path));
}

}  // namespace fsp
