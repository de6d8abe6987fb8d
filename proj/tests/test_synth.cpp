#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include <fsp/flow_io.hpp>
#include <fsp/fsio.hpp>
#include <fsp/metrics.hpp>
#include <fsp/rasterizer.hpp>
#include <fsp/synth.hpp>

using namespace fsp;

namespace {

SceneSpec two_blob_spec() {
    SceneSpec spec;
    spec.frames = 4;
    spec.views = 2;
    spec.width = 48;
    spec.height = 36;
    spec.focal = 40.0;
    BlobSpec moving;
    moving.count = 6;
    moving.center = {-0.8, 0.0, 0.0};
    moving.motion = MotionKind::kLinear;
    moving.velocity = {0.9, 0.0, 0.0};
    BlobSpec still;
    still.count = 5;
    still.center = {0.9, 0.3, 0.2};
    still.base_color = {0.2, 0.4, 0.8};
    spec.blobs = {moving, still};
    return spec;
}

bool images_identical(const Image3d& a, const Image3d& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(Vec3d)) == 0;
}

}  // namespace

TEST_CASE("static scenes have exactly zero flow before noise") {
    SceneSpec spec = two_blob_spec();
    for (BlobSpec& b : spec.blobs) b.motion = MotionKind::kStatic;
    GroundTruth gt = generate(spec, 5);
    REQUIRE(gt.clean_flows.size() == 3);
    size_t valid = 0;
    for (const auto& row : gt.clean_flows)
        for (const FlowField& f : row)
            for (size_t i = 0; i < f.uv.size(); ++i)
                if (f.valid[i]) {
                    CHECK(f.uv[i].x == 0.0);
                    CHECK(f.uv[i].y == 0.0);
                    ++valid;
                }
    CHECK(valid > 100);  // the blobs are actually on screen
    for (uint8_t l : gt.labels) CHECK(l == 0);
}

TEST_CASE("pinhole arithmetic: unit-depth blob moving 0.1/frame gives 10 px flow") {
    SceneSpec spec;
    spec.frames = 2;
    spec.views = 2;  // view 1 sits at azimuth pi where world +x maps to +u
    spec.width = 64;
    spec.height = 48;
    spec.focal = 100.0;
    spec.rig_radius = 1.0;
    spec.rig_height = 0.0;
    BlobSpec blob;
    blob.count = 5;
    blob.center = {0.0, 0.0, 0.0};
    blob.spread = 0.0;  // keep every Gaussian exactly at depth 1
    blob.scale_min = 0.015;
    blob.scale_max = 0.03;
    blob.motion = MotionKind::kLinear;
    blob.velocity = {0.1, 0.0, 0.0};
    spec.blobs = {blob};
    GroundTruth gt = generate(spec, 11);

    const FlowField& f = gt.clean_flows[0][1];
    size_t valid = 0;
    for (size_t i = 0; i < f.uv.size(); ++i)
        if (f.valid[i]) {
            CHECK(f.uv[i].x == doctest::Approx(10.0).epsilon(1e-9));
            CHECK(f.uv[i].y == doctest::Approx(0.0).epsilon(1e-9));
            ++valid;
        }
    CHECK(valid > 4);
    CHECK(gt.labels[0] == 1);
}

TEST_CASE("orbit flow equals the projected finite difference of the trajectory") {
    SceneSpec spec;
    spec.frames = 5;
    spec.views = 1;
    spec.width = 48;
    spec.height = 48;
    spec.focal = 40.0;
    BlobSpec blob;
    blob.count = 1;  // a single Gaussian makes the dominant contributor unambiguous
    blob.center = {0.7, 0.0, 0.0};
    blob.spread = 0.0;
    blob.motion = MotionKind::kOrbit;
    blob.orbit_center = {0.0, 0.0, 0.0};
    blob.orbit_axis = {0.0, 1.0, 0.0};
    blob.orbit_turns = 0.35;
    spec.blobs = {blob};
    GroundTruth gt = generate(spec, 3);

    for (int f = 0; f + 1 < spec.frames; ++f) {
        const Vec3d c0 = gt.clouds[size_t(f)].gaussians[0].center;
        const Vec3d c1 = gt.clouds[size_t(f) + 1].gaussians[0].center;
        auto p0 = project(gt.cams[size_t(f)][0], c0);
        auto p1 = project(gt.cams[size_t(f) + 1][0], c1);
        REQUIRE(p0.has_value());
        REQUIRE(p1.has_value());
        int px = int(std::floor(p0->u)), py = int(std::floor(p0->v));
        const FlowField& flow = gt.clean_flows[size_t(f)][0];
        REQUIRE(flow.valid.at(px, py) == 1);
        CHECK(flow.uv.at(px, py).x == doctest::Approx(p1->u - p0->u).epsilon(1e-9));
        CHECK(flow.uv.at(px, py).y == doctest::Approx(p1->v - p0->v).epsilon(1e-9));
        // The orbit actually moves the Gaussian.
        CHECK((c1 - c0).norm() > 1e-3);
    }
}

TEST_CASE("waypoint paths interpolate piecewise linearly") {
    BlobSpec blob;
    blob.motion = MotionKind::kWaypoints;
    blob.waypoints = {{0, 0, 0}, {1, 0, 0}, {1, 2, 0}};
    CHECK(blob.displacement(0.0).norm() == 0.0);
    Vec3d half = blob.displacement(0.5);  // exactly the middle waypoint
    CHECK(half.x == doctest::Approx(1.0));
    CHECK(half.y == doctest::Approx(0.0));
    Vec3d quarter = blob.displacement(0.25);
    CHECK(quarter.x == doctest::Approx(0.5));
    Vec3d end = blob.displacement(1.0);
    CHECK(end.x == doctest::Approx(1.0));
    CHECK(end.y == doctest::Approx(2.0));
}

TEST_CASE("same seed regenerates bit-identical scenes") {
    SceneSpec spec = two_blob_spec();
    spec.sigma_noise = 0.5;
    spec.outlier_frac = 0.05;
    GroundTruth a = generate(spec, 77);
    GroundTruth b = generate(spec, 77);
    REQUIRE(a.frames() == b.frames());
    for (int f = 0; f < a.frames(); ++f) {
        for (size_t i = 0; i < a.clouds[size_t(f)].size(); ++i) {
            CHECK(a.clouds[size_t(f)].gaussians[i].center.x ==
                  b.clouds[size_t(f)].gaussians[i].center.x);
            CHECK(a.clouds[size_t(f)].gaussians[i].opacity_logit ==
                  b.clouds[size_t(f)].gaussians[i].opacity_logit);
        }
        for (int v = 0; v < a.views(); ++v)
            CHECK(images_identical(a.images[size_t(f)][size_t(v)],
                                   b.images[size_t(f)][size_t(v)]));
    }
    for (size_t f = 0; f < a.flows.size(); ++f)
        for (size_t v = 0; v < a.flows[f].size(); ++v)
            CHECK(encode_flo(a.flows[f][v]) == encode_flo(b.flows[f][v]));

    GroundTruth c = generate(spec, 78);
    bool any_difference = false;
    for (size_t i = 0; i < a.clouds[0].size(); ++i)
        if (a.clouds[0].gaussians[i].center.x != c.clouds[0].gaussians[i].center.x)
            any_difference = true;
    CHECK(any_difference);
}

TEST_CASE("rendering the ground-truth cloud reproduces the images bit for bit") {
    SceneSpec spec = two_blob_spec();
    GroundTruth gt = generate(spec, 21);
    for (int f = 0; f < gt.frames(); ++f)
        for (int v = 0; v < gt.views(); ++v) {
            RenderOutput out =
                render(gt.clouds[size_t(f)], gt.cams[size_t(f)][size_t(v)], spec.background);
            CHECK(images_identical(out.color, gt.images[size_t(f)][size_t(v)]));
        }
}

TEST_CASE("corrupt_flow: identity, noise statistics, and outlier fraction") {
    FlowField clean(100, 100);
    for (size_t i = 0; i < clean.uv.size(); ++i) clean.uv[i] = {1.0, -2.0};

    FlowField same = corrupt_flow(clean, 0.0, 0.0, 9);
    CHECK(std::memcmp(same.uv.data(), clean.uv.data(), clean.uv.size() * sizeof(Vec2d)) == 0);

    FlowField noisy = corrupt_flow(clean, 1.0, 0.0, 9);
    double mean = 0.0, var = 0.0;
    size_t n = 0;
    for (size_t i = 0; i < noisy.uv.size(); ++i) {
        mean += (noisy.uv[i].x - 1.0) + (noisy.uv[i].y + 2.0);
        n += 2;
    }
    mean /= double(n);
    for (size_t i = 0; i < noisy.uv.size(); ++i) {
        double du = noisy.uv[i].x - 1.0 - mean, dv = noisy.uv[i].y + 2.0 - mean;
        var += du * du + dv * dv;
    }
    double stddev = std::sqrt(var / double(n - 1));
    CHECK(stddev > 0.95);
    CHECK(stddev < 1.05);

    FlowField outliers = corrupt_flow(clean, 1.0, 0.1, 13);
    size_t busted = 0;
    for (size_t i = 0; i < outliers.uv.size(); ++i) {
        Vec2d d = outliers.uv[i] - clean.uv[i];
        if (d.norm() > 5.0) ++busted;
    }
    double frac = double(busted) / double(outliers.uv.size());
    CHECK(frac > 0.09);
    CHECK(frac < 0.11);

    // Outliers live within +-width/4.
    for (size_t i = 0; i < outliers.uv.size(); ++i) {
        CHECK(std::abs(outliers.uv[i].x) <= 25.0 + 6.0);  // noise tail allowance
        CHECK(std::abs(outliers.uv[i].y) <= 25.0 + 6.0);
    }

    // Invalid pixels are left untouched.
    FlowField masked(10, 10, false);
    masked.uv[3] = {4.0, 4.0};
    FlowField masked_out = corrupt_flow(masked, 2.0, 0.5, 5);
    CHECK(masked_out.uv[3].x == 4.0);
    CHECK(masked_out.uv[3].y == 4.0);
}

TEST_CASE("spec validation rejects out-of-range fields") {
    SceneSpec ok = two_blob_spec();
    CHECK_NOTHROW(ok.validate());

    SceneSpec bad = ok;
    bad.frames = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.outlier_frac = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.blobs.clear();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.blobs[0].motion = MotionKind::kWaypoints;
    bad.blobs[0].waypoints = {{0, 0, 0}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.blobs[0].opacity_max = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    SceneSpec mono = ok;
    mono.rig = RigKind::kMonocularArc;
    mono.views = 99;  // ignored by the arc rig
    CHECK(mono.view_count() == 1);
    CHECK_NOTHROW(mono.validate());
}

TEST_CASE("scene spec round-trips through config text") {
    SceneSpec spec = two_blob_spec();
    spec.rig = RigKind::kMonocularArc;
    spec.arc_span = 0.41;
    spec.sigma_noise = 0.125;
    spec.blobs[1].motion = MotionKind::kWaypoints;
    spec.blobs[1].waypoints = {{0, 0, 0}, {0.5, 0.25, -0.125}};
    std::string text = spec_to_config(spec).to_text();
    Config cfg = Config::parse_string(text);
    SceneSpec back = spec_from_config(cfg);
    cfg.require_all_consumed();

    CHECK(back.frames == spec.frames);
    CHECK(back.rig == spec.rig);
    CHECK(back.arc_span == spec.arc_span);
    CHECK(back.sigma_noise == spec.sigma_noise);
    REQUIRE(back.blobs.size() == 2);
    CHECK(back.blobs[0].velocity.x == spec.blobs[0].velocity.x);
    CHECK(back.blobs[1].motion == MotionKind::kWaypoints);
    REQUIRE(back.blobs[1].waypoints.size() == 2);
    CHECK(back.blobs[1].waypoints[1].z == -0.125);
    CHECK(spec_to_config(back).to_text() == text);
}

TEST_CASE("dataset directory round-trip") {
    SceneSpec spec = two_blob_spec();
    spec.frames = 3;
    GroundTruth gt = generate(spec, 31);
    auto dir = std::filesystem::temp_directory_path() / "fsp_synth_ds";
    std::filesystem::remove_all(dir);
    write_dataset(dir, gt);

    CHECK(std::filesystem::exists(dir / "spec.cfg"));
    CHECK(std::filesystem::exists(dir / "cams" / "0_0.txt"));
    CHECK(std::filesystem::exists(dir / "frames" / "2" / "1.png"));
    CHECK(std::filesystem::exists(dir / "depth" / "0" / "0.dpt"));
    CHECK(std::filesystem::exists(dir / "flow" / "1" / "0.flo"));
    CHECK(!std::filesystem::exists(dir / "flow" / "2"));  // no forward flow at the end
    CHECK(std::filesystem::exists(dir / "gt" / "trajectories.csv"));
    CHECK(std::filesystem::exists(dir / "gt" / "labels.csv"));

    Dataset ds = read_dataset(dir);
    CHECK(ds.frames() == 3);
    CHECK(ds.views() == 2);
    CHECK(ds.spec.focal == spec.focal);
    REQUIRE(ds.gt_trajectories.size() == 3);
    REQUIRE(ds.gt_trajectories[0].size() == gt.clouds[0].size());
    for (size_t i = 0; i < gt.clouds[0].size(); ++i) {
        CHECK(ds.gt_trajectories[2][i].x == gt.clouds[2].gaussians[i].center.x);
        CHECK(ds.gt_trajectories[2][i].z == gt.clouds[2].gaussians[i].center.z);
    }
    CHECK(ds.gt_labels == gt.labels);

    // Cameras are exact; images match up to 8-bit quantization; flows match
    // up to float32.
    CHECK(ds.cams[1][1].translation.x == gt.cams[1][1].translation.x);
    for (size_t i = 0; i < ds.images[0][0].size(); ++i)
        CHECK(std::abs(ds.images[0][0][i].x - gt.images[0][0][i].x) <= 0.5 / 255.0 + 1e-12);
    for (size_t i = 0; i < ds.flows[0][0].uv.size(); ++i) {
        CHECK(ds.flows[0][0].valid[i] == gt.flows[0][0].valid[i]);
        if (ds.flows[0][0].valid[i])
            CHECK(ds.flows[0][0].uv[i].x == double(float(gt.flows[0][0].uv[i].x)));
    }

    // In-memory handoff keeps full precision.
    Dataset mem = to_dataset(gt);
    CHECK(mem.images[0][0][0].x == gt.images[0][0][0].x);
    CHECK(mem.gt_trajectories[1][0].y == gt.clouds[1].gaussians[0].center.y);
}

TEST_CASE("monocular arc rig moves the camera every frame") {
    SceneSpec spec = two_blob_spec();
    for (BlobSpec& b : spec.blobs) b.motion = MotionKind::kStatic;
    spec.rig = RigKind::kMonocularArc;
    spec.arc_span = 0.6;
    GroundTruth gt = generate(spec, 17);
    CHECK(gt.views() == 1);
    Vec3d c0 = gt.cams[0][0].camera_center();
    Vec3d c1 = gt.cams[1][0].camera_center();
    CHECK((c1 - c0).norm() > 1e-3);

    // Static world + moving camera still induces nonzero image flow.
    double max_mag = 0.0;
    const FlowField& f = gt.clean_flows[0][0];
    for (size_t i = 0; i < f.uv.size(); ++i)
        if (f.valid[i]) max_mag = std::max(max_mag, f.uv[i].norm());
    CHECK(max_mag > 0.5);
}

TEST_CASE("gaussian flow epe is zero against its own flow and grows with error") {
    SceneSpec spec;
    spec.frames = 3;
    spec.views = 1;
    spec.width = 48;
    spec.height = 48;
    spec.focal = 40.0;
    BlobSpec blob;
    blob.count = 1;
    blob.spread = 0.0;
    blob.motion = MotionKind::kLinear;
    blob.velocity = {0.6, 0.2, 0.0};
    spec.blobs = {blob};
    GroundTruth gt = generate(spec, 41);

    CHECK(gaussian_flow_epe(gt.clouds, gt.cams, gt.clean_flows) == 0.0);

    std::vector<GaussianCloud> wrong = gt.clouds;
    wrong[1].gaussians[0].center.x += 0.05;
    CHECK(gaussian_flow_epe(wrong, gt.cams, gt.clean_flows) > 0.1);
}
