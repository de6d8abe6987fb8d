#include "fsp/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "fsp/flow_io.hpp"
#include "fsp/fsio.hpp"
#include "fsp/png_io.hpp"

namespace fsp {
namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(const Vec3d& v) { return fmt(v.x) + "," + fmt(v.y) + "," + fmt(v.z); }

Vec3d vec3_from(Config& cfg, const std::string& key, const Vec3d& fallback) {
    if (!cfg.has(key)) return fallback;
    std::vector<double> v = cfg.get_doubles(key);
    if (v.size() != 3) throw ConfigError("config: key '" + key + "' needs exactly 3 components");
    return {v[0], v[1], v[2]};
}

// Rodrigues rotation of p around the unit axis a by angle phi.
Vec3d rotate_about(const Vec3d& p, const Vec3d& a, double phi) {
    double c = std::cos(phi), s = std::sin(phi);
    return p * c + a.cross(p) * s + a * (a.dot(p) * (1.0 - c));
}

const char* motion_name(MotionKind m) {
    switch (m) {
        case MotionKind::kStatic: return "static";
        case MotionKind::kLinear: return "linear";
        case MotionKind::kOrbit: return "orbit";
        case MotionKind::kWaypoints: return "waypoints";
    }
    return "static";
}

MotionKind motion_from(const std::string& name) {
    if (name == "static") return MotionKind::kStatic;
    if (name == "linear") return MotionKind::kLinear;
    if (name == "orbit") return MotionKind::kOrbit;
    if (name == "waypoints") return MotionKind::kWaypoints;
    throw ConfigError("config: unknown motion kind '" + name + "'");
}

PinholeCamera rig_camera(const SceneSpec& spec, double azimuth) {
    Vec3d eye{spec.rig_radius * std::sin(azimuth), spec.rig_height,
              -spec.rig_radius * std::cos(azimuth)};
    return PinholeCamera::look_at(eye, {0.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, spec.focal, spec.focal,
                                  spec.width / 2.0, spec.height / 2.0, spec.width, spec.height);
}

}  // namespace

Vec3d BlobSpec::displacement(double t) const {
    switch (motion) {
        case MotionKind::kStatic: return {0.0, 0.0, 0.0};
        case MotionKind::kLinear: return velocity * t;
        case MotionKind::kOrbit: {
            Vec3d arm = center - orbit_center;
            double phi = 2.0 * std::numbers::pi * orbit_turns * t;
            return rotate_about(arm, orbit_axis.normalized(), phi) - arm;
        }
        case MotionKind::kWaypoints: {
            const size_t n = waypoints.size();
            double s = t * double(n - 1);
            size_t i = std::min(size_t(std::max(0.0, std::floor(s))), n - 2);
            double f = s - double(i);
            Vec3d pos = waypoints[i] * (1.0 - f) + waypoints[i + 1] * f;
            return pos - waypoints[0];
        }
    }
    return {0.0, 0.0, 0.0};
}

void SceneSpec::validate() const {
    if (blobs.empty()) throw ConfigError("scene: at least one blob is required");
    if (frames < 2) throw ConfigError("scene: frames must be >= 2");
    if (view_count() < 1) throw ConfigError("scene: views must be >= 1");
    if (width < 1 || height < 1) throw ConfigError("scene: image size must be positive");
    if (!(focal > 0.0)) throw ConfigError("scene: focal must be > 0");
    if (!(rig_radius > 0.0)) throw ConfigError("scene: rig_radius must be > 0");
    if (sigma_noise < 0.0) throw ConfigError("scene: sigma_noise must be >= 0");
    if (outlier_frac < 0.0 || outlier_frac > 1.0)
        throw ConfigError("scene: outlier_frac must be in [0, 1]");
    for (size_t b = 0; b < blobs.size(); ++b) {
        const BlobSpec& blob = blobs[b];
        const std::string who = "blob" + std::to_string(b);
        if (blob.count < 1) throw ConfigError(who + ": count must be >= 1");
        if (blob.spread < 0.0) throw ConfigError(who + ": spread must be >= 0");
        if (!(blob.scale_min > 0.0 && blob.scale_max >= blob.scale_min))
            throw ConfigError(who + ": need 0 < scale_min <= scale_max");
        if (!(blob.opacity_min > 0.0 && blob.opacity_max >= blob.opacity_min &&
              blob.opacity_max < 1.0))
            throw ConfigError(who + ": need 0 < opacity_min <= opacity_max < 1");
        if (blob.sh_degree != 0 && blob.sh_degree != 1)
            throw ConfigError(who + ": sh_degree must be 0 or 1");
        if (blob.motion == MotionKind::kWaypoints && blob.waypoints.size() < 2)
            throw ConfigError(who + ": waypoint motion needs at least 2 waypoints");
        if (blob.motion == MotionKind::kOrbit && !(blob.orbit_axis.norm() > 0.0))
            throw ConfigError(who + ": orbit_axis must be nonzero");
    }
}

Config spec_to_config(const SceneSpec& spec) {
    Config cfg;
    cfg.set("frames", std::to_string(spec.frames));
    cfg.set("width", std::to_string(spec.width));
    cfg.set("height", std::to_string(spec.height));
    cfg.set("focal", fmt(spec.focal));
    cfg.set("background", fmt(spec.background));
    cfg.set("sigma_noise", fmt(spec.sigma_noise));
    cfg.set("outlier_frac", fmt(spec.outlier_frac));
    cfg.set("rig.kind", spec.rig == RigKind::kRing ? "ring" : "arc");
    cfg.set("rig.views", std::to_string(spec.views));
    cfg.set("rig.radius", fmt(spec.rig_radius));
    cfg.set("rig.height", fmt(spec.rig_height));
    cfg.set("rig.arc_span", fmt(spec.arc_span));
    for (size_t b = 0; b < spec.blobs.size(); ++b) {
        const BlobSpec& blob = spec.blobs[b];
        const std::string p = "blob" + std::to_string(b) + ".";
        cfg.set(p + "count", std::to_string(blob.count));
        cfg.set(p + "center", fmt(blob.center));
        cfg.set(p + "spread", fmt(blob.spread));
        cfg.set(p + "scale_min", fmt(blob.scale_min));
        cfg.set(p + "scale_max", fmt(blob.scale_max));
        cfg.set(p + "opacity_min", fmt(blob.opacity_min));
        cfg.set(p + "opacity_max", fmt(blob.opacity_max));
        cfg.set(p + "color", fmt(blob.base_color));
        cfg.set(p + "sh_degree", std::to_string(blob.sh_degree));
        cfg.set(p + "motion", motion_name(blob.motion));
        cfg.set(p + "velocity", fmt(blob.velocity));
        cfg.set(p + "orbit_center", fmt(blob.orbit_center));
        cfg.set(p + "orbit_axis", fmt(blob.orbit_axis));
        cfg.set(p + "orbit_turns", fmt(blob.orbit_turns));
        if (!blob.waypoints.empty()) {
            std::string wp;
            for (const Vec3d& w : blob.waypoints) {
                if (!wp.empty()) wp += ",";
                wp += fmt(w);
            }
            cfg.set(p + "waypoints", wp);
        }
    }
    return cfg;
}

SceneSpec spec_from_config(Config& cfg) {
    SceneSpec spec;
    spec.frames = cfg.get_int("frames", spec.frames);
    spec.width = cfg.get_int("width", spec.width);
    spec.height = cfg.get_int("height", spec.height);
    spec.focal = cfg.get_double("focal", spec.focal);
    spec.background = vec3_from(cfg, "background", spec.background);
    spec.sigma_noise = cfg.get_double("sigma_noise", spec.sigma_noise);
    spec.outlier_frac = cfg.get_double("outlier_frac", spec.outlier_frac);
    std::string kind = cfg.get_string("rig.kind", "ring");
    if (kind == "ring") spec.rig = RigKind::kRing;
    else if (kind == "arc") spec.rig = RigKind::kMonocularArc;
    else throw ConfigError("config: unknown rig kind '" + kind + "'");
    spec.views = cfg.get_int("rig.views", spec.views);
    spec.rig_radius = cfg.get_double("rig.radius", spec.rig_radius);
    spec.rig_height = cfg.get_double("rig.height", spec.rig_height);
    spec.arc_span = cfg.get_double("rig.arc_span", spec.arc_span);

    for (int b = 0;; ++b) {
        const std::string p = "blob" + std::to_string(b) + ".";
        if (!cfg.has(p + "count")) break;
        BlobSpec blob;
        blob.count = cfg.get_int(p + "count");
        blob.center = vec3_from(cfg, p + "center", blob.center);
        blob.spread = cfg.get_double(p + "spread", blob.spread);
        blob.scale_min = cfg.get_double(p + "scale_min", blob.scale_min);
        blob.scale_max = cfg.get_double(p + "scale_max", blob.scale_max);
        blob.opacity_min = cfg.get_double(p + "opacity_min", blob.opacity_min);
        blob.opacity_max = cfg.get_double(p + "opacity_max", blob.opacity_max);
        blob.base_color = vec3_from(cfg, p + "color", blob.base_color);
        blob.sh_degree = cfg.get_int(p + "sh_degree", blob.sh_degree);
        blob.motion = motion_from(cfg.get_string(p + "motion", "static"));
        blob.velocity = vec3_from(cfg, p + "velocity", blob.velocity);
        blob.orbit_center = vec3_from(cfg, p + "orbit_center", blob.orbit_center);
        blob.orbit_axis = vec3_from(cfg, p + "orbit_axis", blob.orbit_axis);
        blob.orbit_turns = cfg.get_double(p + "orbit_turns", blob.orbit_turns);
        if (cfg.has(p + "waypoints")) {
            std::vector<double> w = cfg.get_doubles(p + "waypoints");
            if (w.size() % 3 != 0)
                throw ConfigError("config: '" + p + "waypoints' needs 3 values per waypoint");
            for (size_t i = 0; i + 2 < w.size(); i += 3)
                blob.waypoints.push_back({w[i], w[i + 1], w[i + 2]});
        }
        spec.blobs.push_back(std::move(blob));
    }
    spec.validate();
    return spec;
}

GroundTruth generate(const SceneSpec& spec, uint64_t seed) {
    spec.validate();
    GroundTruth gt;
    gt.spec = spec;

    // Base cloud at t = 0. The draw order per Gaussian (center, rotation,
    // scale, opacity, color, band-1 coefficients) is part of the format:
    // changing it changes every seeded scene.
    Rng rng(seed);
    GaussianCloud base;
    std::vector<int> blob_of;
    for (size_t b = 0; b < spec.blobs.size(); ++b) {
        const BlobSpec& blob = spec.blobs[b];
        for (int i = 0; i < blob.count; ++i) {
            Gaussian3 g;
            g.center = blob.center + Vec3d{rng.normal(), rng.normal(), rng.normal()} * blob.spread;
            g.set_rotation({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
            g.set_scale({rng.uniform(blob.scale_min, blob.scale_max),
                         rng.uniform(blob.scale_min, blob.scale_max),
                         rng.uniform(blob.scale_min, blob.scale_max)});
            g.set_opacity(rng.uniform(blob.opacity_min, blob.opacity_max));
            Vec3d rgb{std::clamp(blob.base_color.x + rng.uniform(-0.08, 0.08), 0.05, 0.95),
                      std::clamp(blob.base_color.y + rng.uniform(-0.08, 0.08), 0.05, 0.95),
                      std::clamp(blob.base_color.z + rng.uniform(-0.08, 0.08), 0.05, 0.95)};
            g.sh.assign(blob.sh_degree == 0 ? 1 : 4, Vec3d{});
            g.sh[0] = (rgb - Vec3d{0.5, 0.5, 0.5}) * (1.0 / kSh0);
            for (size_t k = 1; k < g.sh.size(); ++k)
                g.sh[k] = {rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04),
                           rng.uniform(-0.04, 0.04)};
            base.gaussians.push_back(std::move(g));
            blob_of.push_back(int(b));
        }
    }

    // Labels: a Gaussian is dynamic when its blob measurably moves.
    std::vector<uint8_t> blob_dynamic(spec.blobs.size(), 0);
    for (size_t b = 0; b < spec.blobs.size(); ++b)
        for (int f = 0; f < spec.frames; ++f)
            if (spec.blobs[b].displacement(spec.frame_time(f)).norm() > 1e-9) blob_dynamic[b] = 1;
    gt.labels.resize(base.size());
    for (size_t i = 0; i < base.size(); ++i) gt.labels[i] = blob_dynamic[size_t(blob_of[i])];

    // Cameras.
    gt.cams.resize(size_t(spec.frames));
    for (int f = 0; f < spec.frames; ++f) {
        if (spec.rig == RigKind::kRing) {
            for (int v = 0; v < spec.views; ++v)
                gt.cams[size_t(f)].push_back(
                    rig_camera(spec, 2.0 * std::numbers::pi * v / spec.views));
        } else {
            double azimuth = -spec.arc_span / 2.0 + spec.arc_span * spec.frame_time(f);
            gt.cams[size_t(f)].push_back(rig_camera(spec, azimuth));
        }
    }

    // Per-frame clouds: rigid blob translation on top of the base layout.
    for (int f = 0; f < spec.frames; ++f) {
        GaussianCloud cloud = base;
        double t = spec.frame_time(f);
        for (size_t i = 0; i < cloud.size(); ++i)
            cloud.gaussians[i].center += spec.blobs[size_t(blob_of[i])].displacement(t);
        cloud.dynamic_flags = gt.labels;
        gt.clouds.push_back(std::move(cloud));
    }

    // Observations.
    const int views = spec.view_count();
    gt.images.resize(size_t(spec.frames));
    gt.depths.resize(size_t(spec.frames));
    gt.alphas.resize(size_t(spec.frames));
    std::vector<std::vector<RenderOutput>> renders(size_t(spec.frames));
    for (int f = 0; f < spec.frames; ++f)
        for (int v = 0; v < views; ++v) {
            RenderOutput out = render(gt.clouds[size_t(f)], gt.cams[size_t(f)][size_t(v)],
                                      spec.background);
            gt.images[size_t(f)].push_back(out.color);
            gt.depths[size_t(f)].push_back(out.depth);
            gt.alphas[size_t(f)].push_back(out.alpha);
            renders[size_t(f)].push_back(std::move(out));
        }

    // Flow oracle: each pixel carries the projected motion of its
    // maximum-weight contributor (first wins ties), mimicking what a perfect
    // 2D predictor sees, occlusions included. Pixels with no contributor or
    // with an off-camera endpoint are invalid.
    for (int f = 0; f + 1 < spec.frames; ++f) {
        std::vector<FlowField> clean_row, noisy_row;
        for (int v = 0; v < views; ++v) {
            FlowField flow(spec.width, spec.height, false);
            const auto& contributors = renders[size_t(f)][size_t(v)].contributors;
            for (int y = 0; y < spec.height; ++y)
                for (int x = 0; x < spec.width; ++x) {
                    const auto& pixel = contributors.at(x, y);
                    if (pixel.empty()) continue;
                    size_t best = 0;
                    for (size_t c = 1; c < pixel.size(); ++c)
                        if (pixel[c].weight > pixel[best].weight) best = c;
                    int32_t gi = pixel[best].source_index;
                    auto uv = flow_between(gt.cams[size_t(f)][size_t(v)],
                                           gt.cams[size_t(f) + 1][size_t(v)],
                                           gt.clouds[size_t(f)].gaussians[size_t(gi)].center,
                                           gt.clouds[size_t(f) + 1].gaussians[size_t(gi)].center);
                    if (!uv) continue;
                    flow.uv.at(x, y) = *uv;
                    flow.valid.at(x, y) = 1;
                }
            uint64_t noise_seed =
                seed ^ (0x9e3779b97f4a7c15ULL + uint64_t(f) * 0x100000001b3ULL + uint64_t(v));
            noisy_row.push_back(corrupt_flow(flow, spec.sigma_noise, spec.outlier_frac,
                                             noise_seed));
            clean_row.push_back(std::move(flow));
        }
        gt.clean_flows.push_back(std::move(clean_row));
        gt.flows.push_back(std::move(noisy_row));
    }
    return gt;
}

FlowField corrupt_flow(const FlowField& flow, double sigma, double outlier_frac, uint64_t seed) {
    if (sigma < 0.0) throw ConfigError("corrupt_flow: sigma must be >= 0");
    if (outlier_frac < 0.0 || outlier_frac > 1.0)
        throw ConfigError("corrupt_flow: outlier_frac must be in [0, 1]");
    FlowField out = flow;
    if (sigma == 0.0 && outlier_frac == 0.0) return out;
    Rng rng(seed);
    if (sigma > 0.0)
        for (size_t i = 0; i < out.uv.size(); ++i) {
            if (!out.valid[i]) continue;
            out.uv[i].x += sigma * rng.normal();
            out.uv[i].y += sigma * rng.normal();
        }
    if (outlier_frac > 0.0) {
        const double range = flow.width() / 4.0;
        for (size_t i = 0; i < out.uv.size(); ++i) {
            if (!out.valid[i]) continue;
            if (rng.uniform(0.0, 1.0) < outlier_frac)
                out.uv[i] = {rng.uniform(-range, range), rng.uniform(-range, range)};
        }
    }
    return out;
}

Dataset to_dataset(const GroundTruth& gt) {
    Dataset ds;
    ds.spec = gt.spec;
    ds.cams = gt.cams;
    ds.images = gt.images;
    ds.depths = gt.depths;
    ds.flows = gt.flows;
    ds.gt_labels = gt.labels;
    ds.gt_trajectories.resize(gt.clouds.size());
    for (size_t f = 0; f < gt.clouds.size(); ++f)
        for (const Gaussian3& g : gt.clouds[f].gaussians)
            ds.gt_trajectories[f].push_back(g.center);
    return ds;
}

void write_dataset(const std::filesystem::path& dir, const GroundTruth& gt) {
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "spec.cfg", spec_to_config(gt.spec).to_text());

    const int frames = gt.frames(), views = gt.views();
    for (int f = 0; f < frames; ++f)
        for (int v = 0; v < views; ++v) {
            const std::string fv = std::to_string(f) + "_" + std::to_string(v) + ".txt";
            write_file_atomic(dir / "cams" / fv, camera_to_text(gt.cams[size_t(f)][size_t(v)]));
            save_png(dir / "frames" / std::to_string(f) / (std::to_string(v) + ".png"),
                     gt.images[size_t(f)][size_t(v)]);
            write_dpt(dir / "depth" / std::to_string(f) / (std::to_string(v) + ".dpt"),
                      gt.depths[size_t(f)][size_t(v)]);
            if (f + 1 < frames)
                write_flo(dir / "flow" / std::to_string(f) / (std::to_string(v) + ".flo"),
                          gt.flows[size_t(f)][size_t(v)]);
        }

    std::ostringstream traj;
    traj << "frame,gaussian,x,y,z\n";
    for (int f = 0; f < frames; ++f)
        for (size_t i = 0; i < gt.clouds[size_t(f)].size(); ++i) {
            const Vec3d& c = gt.clouds[size_t(f)].gaussians[i].center;
            traj << f << ',' << i << ',' << fmt(c.x) << ',' << fmt(c.y) << ',' << fmt(c.z)
                 << '\n';
        }
    write_file_atomic(dir / "gt" / "trajectories.csv", traj.str());

    std::ostringstream labels;
    labels << "gaussian,dynamic\n";
    for (size_t i = 0; i < gt.labels.size(); ++i)
        labels << i << ',' << int(gt.labels[i]) << '\n';
    write_file_atomic(dir / "gt" / "labels.csv", labels.str());
}

Dataset read_dataset(const std::filesystem::path& dir) {
    Config cfg = Config::parse_file(dir / "spec.cfg");
    Dataset ds;
    ds.spec = spec_from_config(cfg);
    cfg.require_all_consumed();

    const int frames = ds.spec.frames, views = ds.spec.view_count();
    ds.cams.resize(size_t(frames));
    ds.images.resize(size_t(frames));
    ds.depths.resize(size_t(frames));
    for (int f = 0; f < frames; ++f) {
        for (int v = 0; v < views; ++v) {
            const std::string fv = std::to_string(f) + "_" + std::to_string(v) + ".txt";
            ds.cams[size_t(f)].push_back(load_camera((dir / "cams" / fv).string()));
            ds.images[size_t(f)].push_back(
                load_png(dir / "frames" / std::to_string(f) / (std::to_string(v) + ".png")));
            ds.depths[size_t(f)].push_back(
                read_dpt(dir / "depth" / std::to_string(f) / (std::to_string(v) + ".dpt")));
        }
        if (f + 1 < frames) {
            std::vector<FlowField> row;
            for (int v = 0; v < views; ++v)
                row.push_back(
                    read_flo(dir / "flow" / std::to_string(f) / (std::to_string(v) + ".flo")));
            ds.flows.push_back(std::move(row));
        }
    }

    if (std::filesystem::exists(dir / "gt" / "trajectories.csv")) {
        std::istringstream in(read_file_bytes(dir / "gt" / "trajectories.csv"));
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            int f = 0;
            size_t g = 0;
            Vec3d c;
            if (std::sscanf(line.c_str(), "%d,%zu,%lf,%lf,%lf", &f, &g, &c.x, &c.y, &c.z) != 5)
                throw FormatError("trajectories.csv: malformed row: " + line);
            if (f < 0 || f >= frames) throw FormatError("trajectories.csv: frame out of range");
            ds.gt_trajectories.resize(size_t(frames));
            auto& row = ds.gt_trajectories[size_t(f)];
            if (g != row.size()) throw FormatError("trajectories.csv: rows out of order");
            row.push_back(c);
        }
    }
    if (std::filesystem::exists(dir / "gt" / "labels.csv")) {
        std::istringstream in(read_file_bytes(dir / "gt" / "labels.csv"));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            size_t g = 0;
            int dyn = 0;
            if (std::sscanf(line.c_str(), "%zu,%d", &g, &dyn) != 2)
                throw FormatError("labels.csv: malformed row: " + line);
            if (g != ds.gt_labels.size()) throw FormatError("labels.csv: rows out of order");
            ds.gt_labels.push_back(uint8_t(dyn != 0));
        }
    }
    return ds;
}

double gaussian_flow_epe(const std::vector<GaussianCloud>& clouds,
                         const std::vector<std::vector<PinholeCamera>>& cams,
                         const std::vector<std::vector<FlowField>>& ref_flows) {
    double acc = 0.0;
    size_t n = 0;
    for (size_t f = 0; f + 1 < clouds.size() && f < ref_flows.size(); ++f) {
        for (size_t v = 0; v < ref_flows[f].size(); ++v) {
            const PinholeCamera& cam_prev = cams[f][v];
            const PinholeCamera& cam_curr = cams[f + 1][v];
            const FlowField& ref = ref_flows[f][v];
            for (size_t i = 0; i < clouds[f].size(); ++i) {
                auto p = project(cam_prev, clouds[f].gaussians[i].center);
                if (!p) continue;
                int px = int(std::floor(p->u)), py = int(std::floor(p->v));
                if (px < 0 || py < 0 || px >= ref.width() || py >= ref.height()) continue;
                if (!ref.valid.at(px, py)) continue;
                auto uv = flow_between(cam_prev, cam_curr, clouds[f].gaussians[i].center,
                                       clouds[f + 1].gaussians[i].center);
                if (!uv) continue;
                Vec2d d = *uv - ref.uv.at(px, py);
                acc += std::sqrt(d.x * d.x + d.y * d.y);
                ++n;
            }
        }
    }
    return n == 0 ? 0.0 : acc / double(n);
}

}  // namespace fsp
