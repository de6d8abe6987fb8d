#include <doctest.h>

#include <cmath>
#include <vector>

#include <fsp/grad_check.hpp>
#include <fsp/losses.hpp>
#include <fsp/param.hpp>
#include <fsp/rasterizer.hpp>
#include <fsp/rng.hpp>

#include "common/scenes.hpp"

using namespace fsp;

namespace {

// Candidate snapshot with hand-picked weights (max per pixel is exactly 1).
CandidateSet manual_set(const PinholeCamera& cam) {
    CandidateSet set;
    set.generation = 7;
    set.camera = cam;
    set.k = 2;
    PixelCandidates p0;
    p0.px = 10;
    p0.py = 12;
    p0.point = {0, 0, 0};
    p0.candidates = {{0, 1.0, 1.0}, {1, 0.6, 0.6}};
    PixelCandidates p1;
    p1.px = 20;
    p1.py = 15;
    p1.point = {0.2, 0, 0};
    p1.candidates = {{2, 0.5, 1.0}, {0, 0.125, 0.25}};
    set.pixels = {p0, p1};
    return set;
}

std::vector<Vec3<Var>> as_vec3(std::span<const Var> flat, size_t count) {
    std::vector<Vec3<Var>> out(count);
    for (size_t i = 0; i < count; ++i) out[i] = {flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]};
    return out;
}

}  // namespace

// ---------------------------------------------------------------------- //
//  dynamic map                                                            //
// ---------------------------------------------------------------------- //

TEST_CASE("dynamic map normalizes by the max magnitude") {
    FlowField flow(4, 2);
    flow.uv.at(0, 0) = {3, 4};    // |F| = 5
    flow.uv.at(1, 0) = {0, 2.5};  // |F| = 2.5
    flow.uv.at(2, 0) = {0, 0};
    flow.valid.at(3, 0) = 0;
    flow.uv.at(3, 0) = {100, 100};  // invalid: must not drive the max

    Imaged map = dynamic_map_from_flow(flow);
    CHECK(map.at(0, 0) == doctest::Approx(1.0));
    CHECK(map.at(1, 0) == doctest::Approx(0.5));
    CHECK(map.at(2, 0) == 0.0);
    CHECK(map.at(3, 0) == 0.0);
    for (int x = 0; x < 4; ++x) CHECK(map.at(x, 1) == 0.0);
}

TEST_CASE("near-static flow maps to all zeros") {
    FlowField flow(3, 3);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) flow.uv.at(x, y) = {1e-9, -1e-9};
    Imaged map = dynamic_map_from_flow(flow);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) CHECK(map.at(x, y) == 0.0);
}

TEST_CASE("non-finite flow pixels are ignored") {
    FlowField flow(2, 1);
    flow.uv.at(0, 0) = {std::nan(""), 1.0};
    flow.uv.at(1, 0) = {2.0, 0.0};
    Imaged map = dynamic_map_from_flow(flow);
    CHECK(map.at(0, 0) == 0.0);
    CHECK(map.at(1, 0) == 1.0);
}

// ---------------------------------------------------------------------- //
//  dynamic-aware color loss                                               //
// ---------------------------------------------------------------------- //

TEST_CASE("uniform dynamic map reduces the color loss to plain MSE") {
    Rng rng(4);
    int w = 6, h = 5;
    Image3d target(w, h), rendered_d(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            target.at(x, y) = {rng.uniform(), rng.uniform(), rng.uniform()};
            rendered_d.at(x, y) = {rng.uniform(), rng.uniform(), rng.uniform()};
        }
    double mse = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            Vec3d d = rendered_d.at(x, y) - target.at(x, y);
            mse += d.x * d.x + d.y * d.y + d.z * d.z;
        }
    mse /= double(w * h * 3);

    Imaged ones(w, h, 1.0), zeros(w, h, 0.0);
    CHECK(color_loss_dynamic(rendered_d, target, ones, 0.5) == doctest::Approx(mse).epsilon(1e-12));
    CHECK(color_loss_dynamic(rendered_d, target, ones, 0.9) == doctest::Approx(mse).epsilon(1e-12));
    // a zero map keeps only the unmasked share
    CHECK(color_loss_dynamic(rendered_d, target, zeros, 0.3) ==
          doctest::Approx(0.7 * mse).epsilon(1e-12));

    Imaged bad(w + 1, h, 1.0);
    CHECK_THROWS_AS(color_loss_dynamic(rendered_d, target, bad, 0.5), std::domain_error);
}

TEST_CASE("identical images give exactly zero color loss") {
    Image3d img(3, 3, {0.25, 0.5, 0.75});
    Imaged map(3, 3, 0.8);
    CHECK(color_loss_dynamic(img, img, map, 0.5) == 0.0);
}

// ---------------------------------------------------------------------- //
//  KL flow loss                                                           //
// ---------------------------------------------------------------------- //

TEST_CASE("unit variance single candidate: loss is half the squared residual") {
    PinholeCamera cam = testutil::test_camera();
    CandidateSet set;
    set.generation = 1;
    set.camera = cam;
    set.k = 1;
    PixelCandidates pc;
    pc.px = 5;
    pc.py = 6;
    pc.candidates = {{0, 1.0, 1.0}};
    set.pixels = {pc};

    FlowField prior(cam.width, cam.height);
    prior.uv.at(5, 6) = {3.0, -1.0};

    PredictedFlowSet<double> pred;
    pred.flows = {{Vec2d{1.0, 1.0}}};  // residual (2, -2) -> |r|^2 = 8

    std::vector<double> conf = {1.0};
    size_t counted = 0;
    double loss = flow_loss_kl<double>(prior, set, pred, conf, &counted);
    CHECK(counted == 1);
    CHECK(loss == doctest::Approx(4.0).epsilon(1e-12));

    pred.flows = {{Vec2d{3.0, -1.0}}};  // exact match
    CHECK(flow_loss_kl<double>(prior, set, pred, conf) == doctest::Approx(0.0));
}

TEST_CASE("invalid pixels and missing predictions are uncounted") {
    PinholeCamera cam = testutil::test_camera();
    CandidateSet set = manual_set(cam);
    FlowField prior(cam.width, cam.height);
    prior.uv.at(10, 12) = {1.0, 0.0};
    prior.valid.at(20, 15) = 0;  // second pixel dropped entirely

    PredictedFlowSet<double> pred;
    pred.flows = {{Vec2d{0, 0}, std::nullopt},  // second candidate dropped (behind camera)
                  {Vec2d{9, 9}, Vec2d{9, 9}}};

    std::vector<double> conf = {1.0, 1.0, 1.0};
    size_t counted = 0;
    double loss = flow_loss_kl<double>(prior, set, pred, conf, &counted);
    CHECK(counted == 1);
    CHECK(loss == doctest::Approx(0.5).epsilon(1e-12));  // | (1,0) |^2 / 2

    // non-finite prior invalidates its pixel
    prior.valid.at(20, 15) = 1;
    prior.uv.at(20, 15) = {std::numeric_limits<double>::infinity(), 0.0};
    flow_loss_kl<double>(prior, set, pred, conf, &counted);
    CHECK(counted == 1);
}

TEST_CASE("empty candidate evidence gives zero loss") {
    PinholeCamera cam = testutil::test_camera();
    CandidateSet set;
    set.generation = 0;
    set.camera = cam;
    set.k = 1;
    FlowField prior(cam.width, cam.height);
    PredictedFlowSet<double> pred;
    size_t counted = 9;
    CHECK(flow_loss_kl<double>(prior, set, pred, {}, &counted) == 0.0);
    CHECK(counted == 0);
}

TEST_CASE("confidence trade-off has its minimum at inverse squared residual") {
    PinholeCamera cam = testutil::test_camera();
    CandidateSet set;
    set.generation = 1;
    set.camera = cam;
    set.k = 1;
    PixelCandidates pc;
    pc.px = 2;
    pc.py = 3;
    pc.candidates = {{0, 1.0, 1.0}};
    set.pixels = {pc};
    FlowField prior(cam.width, cam.height);
    prior.uv.at(2, 3) = {0.9, -1.2};

    PredictedFlowSet<double> predd;
    predd.flows = {{Vec2d{0.4, -0.5}}};  // residual (0.5, -0.7)
    double r2 = 0.5 * 0.5 + 0.7 * 0.7;
    double c_star = 1.0 / r2;

    auto loss_at = [&](double c) {
        std::vector<double> conf = {c};
        return flow_loss_kl<double>(prior, set, predd, conf);
    };
    CHECK(loss_at(c_star) < loss_at(0.7 * c_star));
    CHECK(loss_at(c_star) < loss_at(1.3 * c_star));

    // analytic gradient w.r.t. the confidence vanishes at the minimizer
    Tape tape;
    TapeScope scope(tape);
    Var c = Var::leaf(c_star);
    PredictedFlowSet<Var> pred;
    pred.flows = {{Vec2<Var>{Var(0.4), Var(-0.5)}}};
    std::vector<Var> conf = {c};
    Var loss = flow_loss_kl<Var>(prior, set, pred, conf);
    auto adj = tape.backward(loss.idx);
    CHECK(std::abs(adj[size_t(c.idx)]) < 1e-12);
}

TEST_CASE("KL flow loss gradients match finite differences") {
    Rng rng(31);
    PinholeCamera cam_prev = testutil::test_camera();
    PinholeCamera cam_curr = PinholeCamera::look_at({0.3, 0.1, -4.8}, {0, 0, 0}, {0, 1, 0}, 30, 30,
                                                    16, 16, 32, 32);
    CandidateSet set = manual_set(cam_prev);
    FlowField prior(cam_prev.width, cam_prev.height);
    prior.uv.at(10, 12) = {1.3, -0.4};
    prior.uv.at(20, 15) = {-0.7, 2.1};

    std::vector<double> prev, curr, logc;
    for (int i = 0; i < 9; ++i) prev.push_back(rng.uniform(-0.6, 0.6));
    for (int i = 0; i < 9; ++i) curr.push_back(prev[i] + rng.uniform(-0.1, 0.1));
    logc = {0.2, -0.3, 0.05};

    ParamSet params;
    params.add_segment("prev_centers", prev, 0);
    params.add_segment("curr_centers", curr, 0);
    params.add_segment("log_confidence", logc, 0);

    LossFn f = [&](std::span<const Var> p) {
        auto prev_v = as_vec3(p.subspan(0, 9), 3);
        auto curr_v = as_vec3(p.subspan(9, 9), 3);
        std::vector<Var> conf;
        for (int i = 0; i < 3; ++i) conf.push_back(confidence_from_log(p[18 + size_t(i)]));
        auto pred = predicted_flows<Var>(set, set.generation, prev_v, set.generation, curr_v,
                                         cam_prev, cam_curr);
        return flow_loss_kl<Var>(prior, set, pred, conf);
    };
    GradCheckReport report = grad_check(f, params, 1e-4, 1e-4);
    INFO(report.to_text());
    CHECK(report.passed());
    CHECK(report.max_rel_error <= 1e-4);
}

// ---------------------------------------------------------------------- //
//  physical (local rigidity) loss                                         //
// ---------------------------------------------------------------------- //

TEST_CASE("one moving Gaussian against a static neighbor costs its squared shift") {
    std::vector<Vec3d> prev = {{0, 0, 0}, {2, 0, 0}};
    std::vector<Vec3d> curr = {{1, 0, 0}, {2, 0, 0}};
    std::vector<uint8_t> mask = {1, 1};
    auto neighbors = dynamic_neighbors(prev, mask, 1);
    REQUIRE(neighbors[0] == std::vector<int32_t>{1});
    REQUIRE(neighbors[1] == std::vector<int32_t>{0});
    double loss = physical_loss<double>(curr, prev, neighbors);
    CHECK(loss == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rigid common translation costs nothing") {
    Rng rng(8);
    std::vector<Vec3d> prev(6), curr(6);
    for (auto& p : prev) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    for (size_t i = 0; i < prev.size(); ++i) curr[i] = prev[i] + Vec3d{0.3, -0.2, 0.5};
    std::vector<uint8_t> mask(6, 1);
    auto neighbors = dynamic_neighbors(prev, mask, 3);
    CHECK(physical_loss<double>(curr, prev, neighbors) == doctest::Approx(0.0));
}

TEST_CASE("neighbor lists: dynamic-only, no self, brute-force agreement") {
    Rng rng(17);
    std::vector<Vec3d> prev(20);
    for (auto& p : prev) p = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    std::vector<uint8_t> mask(20, 0);
    std::vector<int32_t> dyn;
    for (size_t i = 0; i < 20; i += 2) {
        mask[i] = 1;
        dyn.push_back(int32_t(i));
    }
    int m = 4;
    auto neighbors = dynamic_neighbors(prev, mask, m);
    for (size_t i = 0; i < 20; ++i) {
        if (!mask[i]) {
            CHECK(neighbors[i].empty());
            continue;
        }
        REQUIRE(neighbors[i].size() == size_t(m));
        // brute force over dynamic indices
        std::vector<std::pair<double, int32_t>> dist;
        for (int32_t j : dyn)
            if (j != int32_t(i)) dist.push_back({(prev[j] - prev[i]).squared_norm(), j});
        std::sort(dist.begin(), dist.end());
        for (int j = 0; j < m; ++j) CHECK(neighbors[i][j] == dist[size_t(j)].second);
    }
}

TEST_CASE("fewer than two dynamic Gaussians produce zero physical loss") {
    std::vector<Vec3d> prev = {{0, 0, 0}, {1, 1, 1}};
    std::vector<Vec3d> curr = {{5, 0, 0}, {1, 1, 1}};
    std::vector<uint8_t> mask = {1, 0};
    auto neighbors = dynamic_neighbors(prev, mask, 8);
    CHECK(physical_loss<double>(curr, prev, neighbors) == 0.0);
}

TEST_CASE("physical loss gradients match finite differences") {
    Rng rng(12);
    std::vector<Vec3d> prev_pts(5);
    for (auto& p : prev_pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    std::vector<uint8_t> mask(5, 1);
    mask[3] = 0;
    auto neighbors = dynamic_neighbors(prev_pts, mask, 2);

    std::vector<double> prev, curr;
    for (const auto& p : prev_pts) {
        prev.insert(prev.end(), {p.x, p.y, p.z});
        curr.insert(curr.end(),
                    {p.x + rng.uniform(-0.2, 0.2), p.y + rng.uniform(-0.2, 0.2),
                     p.z + rng.uniform(-0.2, 0.2)});
    }
    ParamSet params;
    params.add_segment("prev_centers", prev, 0);
    params.add_segment("curr_centers", curr, 0);
    LossFn f = [&](std::span<const Var> p) {
        auto prev_v = as_vec3(p.subspan(0, 15), 5);
        auto curr_v = as_vec3(p.subspan(15, 15), 5);
        return physical_loss<Var>(curr_v, prev_v, neighbors);
    };
    GradCheckReport report = grad_check(f, params, 1e-4, 1e-4);
    INFO(report.to_text());
    CHECK(report.passed());
}

// ---------------------------------------------------------------------- //
//  velocity alignment                                                     //
// ---------------------------------------------------------------------- //

TEST_CASE("velocity alignment is the mean L1 residual") {
    VelocityAlignmentItems<double> items;
    items.gaussian = {0, 1};
    items.predicted = {{1.5, 0.0}, {0.0, -2.0}};
    items.prior = {{1.0, 0.5}, {0.0, 0.0}};
    CHECK(velocity_alignment(items) == doctest::Approx(1.5).epsilon(1e-12));

    VelocityAlignmentItems<double> empty;
    CHECK(velocity_alignment(empty) == 0.0);
}

TEST_CASE("alignment items project the velocity displacement") {
    PinholeCamera cam = testutil::test_camera();
    CandidateSet set;
    set.generation = 3;
    set.camera = cam;
    set.k = 1;
    PixelCandidates pc;
    pc.px = 16;
    pc.py = 16;
    pc.candidates = {{0, 1.0, 1.0}};
    set.pixels = {pc};
    FlowField prior(cam.width, cam.height);
    prior.uv.at(16, 16) = {2.0, 1.0};

    std::vector<Vec3d> centers = {{0.1, -0.2, 0.0}};
    std::vector<Vec3d> velocities = {{0.8, 0.4, -0.2}};
    double dt = 0.5;
    auto items = velocity_alignment_items<double>(set, prior, 3, centers, velocities, dt);
    REQUIRE(items.predicted.size() == 1);
    CHECK(items.gaussian[0] == 0);
    CHECK(items.prior[0].x == 2.0);
    CHECK(items.prior[0].y == 1.0);

    Vec3d moved = centers[0] + velocities[0] * dt;
    auto p0 = project(cam, centers[0]);
    auto p1 = project(cam, moved);
    CHECK(items.predicted[0].x == doctest::Approx(p1->u - p0->u).epsilon(1e-14));
    CHECK(items.predicted[0].y == doctest::Approx(p1->v - p0->v).epsilon(1e-14));

    CHECK_THROWS_AS(velocity_alignment_items<double>(set, prior, 4, centers, velocities, dt),
                    StaleCandidateError);
}

TEST_CASE("each Gaussian is credited by its strongest pixel") {
    PinholeCamera cam = testutil::test_camera();
    CandidateSet set;
    set.generation = 0;
    set.camera = cam;
    set.k = 1;
    PixelCandidates a, b;
    a.px = 4;
    a.py = 4;
    a.candidates = {{0, 0.5, 0.5}};
    b.px = 8;
    b.py = 8;
    b.candidates = {{0, 1.0, 1.0}};
    set.pixels = {a, b};
    FlowField prior(cam.width, cam.height);
    prior.uv.at(4, 4) = {9, 9};
    prior.uv.at(8, 8) = {1, 1};

    std::vector<Vec3d> centers = {{0, 0, 0}};
    std::vector<Vec3d> velocities = {{0, 0, 0}};
    auto items = velocity_alignment_items<double>(set, prior, 0, centers, velocities, 1.0);
    REQUIRE(items.prior.size() == 1);
    CHECK(items.prior[0].x == 1.0);  // the weight-1 pixel wins
    CHECK(items.prior[0].y == 1.0);
}

TEST_CASE("velocity alignment gradients match finite differences") {
    Rng rng(44);
    PinholeCamera cam = testutil::test_camera();
    CandidateSet set = manual_set(cam);
    FlowField prior(cam.width, cam.height);
    prior.uv.at(10, 12) = {1.5, -0.8};
    prior.uv.at(20, 15) = {-0.6, 1.1};

    std::vector<double> centers, velocities;
    for (int i = 0; i < 9; ++i) centers.push_back(rng.uniform(-0.5, 0.5));
    for (int i = 0; i < 9; ++i) velocities.push_back(rng.uniform(-0.4, 0.4));

    ParamSet params;
    params.add_segment("centers", centers, 0);
    params.add_segment("velocities", velocities, 0);
    LossFn f = [&](std::span<const Var> p) {
        auto c = as_vec3(p.subspan(0, 9), 3);
        auto v = as_vec3(p.subspan(9, 9), 3);
        auto items = velocity_alignment_items<Var>(set, prior, set.generation, c, v, 0.25);
        return velocity_alignment(items);
    };
    GradCheckReport report = grad_check(f, params, 1e-5, 1e-4);
    INFO(report.to_text());
    CHECK(report.passed());
}

// ---------------------------------------------------------------------- //
//  schedule and totals                                                    //
// ---------------------------------------------------------------------- //

TEST_CASE("flow weight schedule: warmup, peak, cosine midpoint, floor") {
    LambdaSchedule s;
    s.lambda_max = 0.1;
    s.lambda_min_fraction = 0.01;
    s.warmup_end = 200;
    s.decay_end = 1000;

    CHECK(s.at(0) == 0.0);
    CHECK(s.at(100) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(s.at(200) == 0.1);
    double mid = s.at(600);
    CHECK(std::abs(mid - 0.5 * (0.1 + 0.001)) <= 1e-12);
    CHECK(s.at(1000) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(s.at(100000) == doctest::Approx(0.001).epsilon(1e-12));

    // monotone decay and continuity at the boundaries
    CHECK(s.at(400) > s.at(600));
    CHECK(s.at(600) > s.at(800));
    CHECK(std::abs(s.at(199) - s.at(200)) < 1e-3);
    CHECK(std::abs(s.at(999) - s.at(1000)) < 1e-5);

    LambdaSchedule bad = s;
    bad.decay_end = 100;
    CHECK_THROWS_AS(bad.at(5), std::domain_error);
}

TEST_CASE("total objectives combine their terms as configured") {
    LossTerms<double> t;
    t.color = 0.5;
    t.flow = 0.2;
    t.physical = 0.1;
    t.velocity = 0.4;
    CHECK(total_loss_iterative(t, 1.0, 0.05) ==
          doctest::Approx(0.5 + 1.0 * 0.1 + 0.05 * 0.2).epsilon(1e-12));
    CHECK(total_loss_deform(t, 0.05) == doctest::Approx(0.5 + 0.05 * (0.2 + 0.4)).epsilon(1e-12));
    // zero weight removes flow supervision entirely
    CHECK(total_loss_iterative(t, 1.0, 0.0) == doctest::Approx(0.5 + 0.1).epsilon(1e-12));
}

// ---------------------------------------------------------------------- //
//  composed color loss through the renderer                               //
// ---------------------------------------------------------------------- //

TEST_CASE("dynamic-aware color loss gradients through the renderer match FD") {
    Rng rng(101);
    GaussianCloud cloud = testutil::random_cloud(rng, 4);
    PinholeCamera cam = testutil::test_camera(12, 12, 12.0);

    // target: a perturbed render, so residuals are small but nonzero
    GaussianCloud perturbed = cloud;
    for (auto& g : perturbed.gaussians) {
        g.center.x += rng.uniform(-0.05, 0.05);
        g.center.y += rng.uniform(-0.05, 0.05);
    }
    RenderOptions exact;
    exact.exact = true;
    Image3d target = render(perturbed, cam, {0.1, 0.1, 0.1}, exact).color;

    Imaged dmap(cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) dmap.at(x, y) = rng.uniform();

    ParamSet params;
    add_cloud_segments(params, cloud, {});
    size_t n = cloud.size();
    LossFn f = [&](std::span<const Var> p) {
        auto gaussians = gaussians_from_params<Var>(params, p, n, cloud.gaussians[0].sh.size());
        auto out = render<Var>(gaussians, cam, {0.1, 0.1, 0.1}, exact);
        return color_loss_dynamic<Var>(out.color, target, dmap, 0.5);
    };
    GradCheckReport report = grad_check(f, params, 1e-4, 1e-4);
    INFO(report.to_text());
    CHECK(report.passed());
}
