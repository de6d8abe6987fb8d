#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include <fsp/grad_check.hpp>
#include <fsp/param.hpp>
#include <fsp/rng.hpp>

#include "common/scenes.hpp"

using namespace fsp;

// ---------------------------------------------------------------------- //
//  ParamSet registry                                                      //
// ---------------------------------------------------------------------- //

TEST_CASE("segments are disjoint, exhaustive, and addressable by name") {
    ParamSet params;
    std::vector<double> a = {1, 2, 3}, b = {4, 5};
    params.add_segment("a", a, 0.1);
    params.add_segment("b", b, 0.2);

    CHECK(params.size() == 5);
    CHECK(params.segment("a").offset == 0);
    CHECK(params.segment("a").length == 3);
    CHECK(params.segment("b").offset == 3);
    CHECK(params.segment("b").length == 2);
    CHECK(params.segment("b").lr == 0.2);

    size_t covered = 0;
    for (const auto& s : params.segments()) covered += s.length;
    CHECK(covered == params.size());

    CHECK(params.view("b")[0] == 4.0);
    params.view("b")[0] = 9.0;
    CHECK(params.values()[3] == 9.0);

    CHECK(params.param_name(1) == "a[1]");
    CHECK(params.param_name(4) == "b[1]");

    CHECK_THROWS_AS(params.add_segment("a", a, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(params.segment("missing"), std::out_of_range);
    CHECK_THROWS_AS(params.set_trainable("missing", false), std::out_of_range);
}

TEST_CASE("leaves mirror the flat layout; non-empty tape is rejected") {
    ParamSet params;
    std::vector<double> a = {1.5, -2.5};
    params.add_segment("a", a, 0.0);

    Tape tape;
    TapeScope scope(tape);
    auto leaves = params.make_leaves();
    REQUIRE(leaves.size() == 2);
    CHECK(leaves[0].idx == 0);
    CHECK(leaves[1].idx == 1);
    CHECK(leaves[0].value() == 1.5);

    CHECK_THROWS_AS(params.make_leaves(), std::logic_error);  // tape no longer empty
}

TEST_CASE("non-finite gradients are a named hard failure") {
    ParamSet params;
    std::vector<double> a = {1.0, 2.0};
    params.add_segment("weights", a, 0.0);
    std::vector<double> adjoints = {0.5, std::numeric_limits<double>::quiet_NaN(), 7.0};
    try {
        extract_gradients(params, adjoints);
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("weights[1]") != std::string::npos);
    }
}

// ---------------------------------------------------------------------- //
//  Adam                                                                   //
// ---------------------------------------------------------------------- //

TEST_CASE("first step moves by lr times the gradient sign") {
    ParamSet params;
    std::vector<double> x = {1.0, -3.0};
    params.add_segment("x", x, 0.05);
    Adam opt(params.size());
    std::vector<double> grad = {0.2, -4.0};
    opt.step(params, grad);
    // bias-corrected first step: lr * g / (|g| + eps)
    CHECK(params.values()[0] == doctest::Approx(1.0 - 0.05).epsilon(1e-9));
    CHECK(params.values()[1] == doctest::Approx(-3.0 + 0.05).epsilon(1e-9));
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("quadratic bowl converges to the minimum") {
    ParamSet params;
    std::vector<double> x = {2.0, -1.5, 0.7};
    params.add_segment("x", x, 0.05);
    Adam opt(params.size());
    for (int it = 0; it < 800; ++it) {
        std::vector<double> grad(params.values().begin(), params.values().end());
        opt.step(params, grad);  // d/dx of 0.5*|x|^2 is x
    }
    for (double v : params.values()) CHECK(std::abs(v) < 1e-3);
}

TEST_CASE("frozen segments stay bitwise identical") {
    ParamSet params;
    std::vector<double> a = {0.123456789, -0.987654321}, b = {1.0};
    params.add_segment("frozen", a, 0.1);
    params.add_segment("live", b, 0.1);
    params.set_trainable("frozen", false);
    Adam opt(params.size());
    std::vector<double> grad = {5.0, 5.0, 5.0};
    for (int i = 0; i < 10; ++i) opt.step(params, grad);
    CHECK(params.values()[0] == 0.123456789);
    CHECK(params.values()[1] == -0.987654321);
    CHECK(params.values()[2] != 1.0);
}

TEST_CASE("moment remap follows survivors and zeroes newcomers") {
    ParamSet params;
    std::vector<double> x = {1.0, 2.0};
    params.add_segment("x", x, 0.1);
    Adam opt(params.size());
    std::vector<double> grad = {1.0, -2.0};
    opt.step(params, grad);

    // grow: keep entry 1, drop entry 0, add two fresh slots
    std::vector<int64_t> map = {1, -1, -1};
    opt.remap(map);
    ParamSet grown;
    std::vector<double> y = {2.0, 5.0, 6.0};
    grown.add_segment("x", y, 0.1);

    // a zero-gradient step only moves entries with carried momentum
    std::vector<double> zero = {0.0, 0.0, 0.0};
    opt.step(grown, zero);
    CHECK(grown.values()[0] != 2.0);  // carried momentum keeps pushing
    CHECK(grown.values()[1] == 5.0);
    CHECK(grown.values()[2] == 6.0);
}

// ---------------------------------------------------------------------- //
//  grad_check harness                                                     //
// ---------------------------------------------------------------------- //

TEST_CASE("quadratic loss: gradient is the parameter itself, exactly") {
    ParamSet params;
    std::vector<double> x = {0.3, -1.2, 2.5};
    params.add_segment("p", x, 0.0);

    // analytic gradient of 0.5*|p|^2 equals p exactly
    Tape tape;
    TapeScope scope(tape);
    auto leaves = params.make_leaves();
    Var loss = 0.5 * (leaves[0] * leaves[0] + leaves[1] * leaves[1] + leaves[2] * leaves[2]);
    auto adj = tape.backward(loss.idx);
    auto grad = extract_gradients(params, adj);
    CHECK(grad[0] == 0.3);
    CHECK(grad[1] == -1.2);
    CHECK(grad[2] == 2.5);

    LossFn f = [](std::span<const Var> p) {
        Var s(0.0);
        for (const Var& v : p) s = s + 0.5 * v * v;
        return s;
    };
    GradCheckReport report = grad_check(f, params, 1e-4, 1e-4);
    CHECK(report.max_rel_error < 1e-8);
    CHECK(report.passed());
    CHECK(report.segments.size() == 1);
    CHECK(report.segments[0].first == "p");
}

TEST_CASE("constant loss has exactly zero gradient everywhere") {
    ParamSet params;
    std::vector<double> x = {1.0, 2.0};
    params.add_segment("p", x, 0.0);
    LossFn f = [](std::span<const Var>) { return Var(3.5); };
    GradCheckReport report = grad_check(f, params, 1e-4, 1e-4);
    CHECK(report.max_rel_error == 0.0);
}

TEST_CASE("a planted wrong gradient is caught") {
    ParamSet params;
    std::vector<double> x = {0.8};
    params.add_segment("p", x, 0.0);
    // detach() hides half the dependence: analytic grad = x, true grad = 2x
    LossFn f = [](std::span<const Var> p) { return p[0] * detach(p[0]); };
    GradCheckReport report = grad_check(f, params, 1e-4, 1e-4);
    CHECK(!report.passed());
    CHECK(report.max_rel_error > 0.4);
    CHECK(report.worst_param == "p[0]");
}

TEST_CASE("non-deterministic losses are a hard error") {
    ParamSet params;
    std::vector<double> x = {1.0};
    params.add_segment("p", x, 0.0);
    int calls = 0;
    LossFn f = [&calls](std::span<const Var> p) { return p[0] * double(++calls); };
    CHECK_THROWS_AS(grad_check(f, params, 1e-4, 1e-4), std::runtime_error);
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(77);
    ParamSet params;
    std::vector<double> x;
    for (int i = 0; i < 6; ++i) x.push_back(rng.uniform(0.2, 1.5));
    params.add_segment("p", x, 0.0);

    auto l1 = [](std::span<const Var> p) {
        Var s(0.0);
        for (size_t i = 0; i < p.size(); ++i) s = s + exp(p[i] * 0.3) * p[(i + 1) % p.size()];
        return s;
    };
    auto l2 = [](std::span<const Var> p) {
        Var s(1.0);
        for (const Var& v : p) s = s * (0.5 + v * v);
        return log(s);
    };
    auto grad_of = [&](auto fn) {
        Tape tape;
        TapeScope scope(tape);
        auto leaves = params.make_leaves();
        Var loss = fn(leaves);
        return extract_gradients(params, tape.backward(loss.idx));
    };
    double a = 1.7, b = -0.4;
    auto g1 = grad_of(l1);
    auto g2 = grad_of(l2);
    auto gc = grad_of([&](std::span<const Var> p) { return a * l1(p) + b * l2(p); });
    for (size_t i = 0; i < params.size(); ++i) {
        CHECK(gc[i] == doctest::Approx(a * g1[i] + b * g2[i]).epsilon(1e-12));
    }
}

TEST_CASE("two identical backward passes agree bitwise") {
    Rng rng(5);
    ParamSet params;
    std::vector<double> x;
    for (int i = 0; i < 8; ++i) x.push_back(rng.uniform(-1, 1));
    params.add_segment("p", x, 0.0);
    auto run = [&] {
        Tape tape;
        TapeScope scope(tape);
        auto leaves = params.make_leaves();
        Var s(0.0);
        for (size_t i = 0; i < leaves.size(); ++i) {
            s = s + sigmoid(leaves[i]) * tanh(leaves[(i + 3) % leaves.size()]);
        }
        return extract_gradients(params, tape.backward(s.idx));
    };
    auto g1 = run(), g2 = run();
    for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

// ---------------------------------------------------------------------- //
//  cloud packing                                                          //
// ---------------------------------------------------------------------- //

TEST_CASE("cloud round-trips through segments bit-for-bit") {
    Rng rng(13);
    GaussianCloud cloud = testutil::random_cloud(rng, 5);
    cloud.register_views(2);  // adds per-view confidences

    ParamSet params;
    add_cloud_segments(params, cloud, {});
    CHECK(params.size() == 5 * (3 + 4 + 3 + 1 + 12) + 5 * 2);

    // mutate through the flat view, then write back
    GaussianCloud copy = cloud;
    params_to_cloud(params, copy);
    for (size_t i = 0; i < cloud.size(); ++i) {
        CHECK(copy.gaussians[i].center.x == cloud.gaussians[i].center.x);
        CHECK(copy.gaussians[i].rotation.w == cloud.gaussians[i].rotation.w);
        CHECK(copy.gaussians[i].log_scale.z == cloud.gaussians[i].log_scale.z);
        CHECK(copy.gaussians[i].opacity_logit == cloud.gaussians[i].opacity_logit);
        CHECK(copy.gaussians[i].sh[3].y == cloud.gaussians[i].sh[3].y);
        CHECK(copy.log_confidence[i][1] == cloud.log_confidence[i][1]);
    }

    auto rebuilt = gaussians_from_params<double>(params, params.values(), cloud.size(), 4);
    for (size_t i = 0; i < cloud.size(); ++i) {
        CHECK(rebuilt[i].center.y == cloud.gaussians[i].center.y);
        CHECK(rebuilt[i].sh[2].z == cloud.gaussians[i].sh[2].z);
    }
}
