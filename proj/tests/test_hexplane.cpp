#include <doctest.h>

#include <cmath>
#include <vector>

#include <fsp/hexplane.hpp>
#include <fsp/mlp.hpp>
#include <fsp/rng.hpp>

using namespace fsp;

namespace {

// Independent bilinear-product reference with a different evaluation order.
std::vector<double> query_oracle(const HexPlaneLayout& layout, const std::vector<double>& values,
                                 const Vec3d& x, double t) {
    auto norm = [](double v, double lo, double hi) {
        double n = (v - lo) / (hi - lo);
        return n < 0 ? 0.0 : (n > 1 ? 1.0 : n);
    };
    double coord[4] = {norm(x.x, layout.lo.x, layout.hi.x), norm(x.y, layout.lo.y, layout.hi.y),
                       norm(x.z, layout.lo.z, layout.hi.z), norm(t, layout.t0, layout.t1)};
    std::vector<double> out;
    for (int level = 0; level < int(layout.resolutions.size()); ++level) {
        int r = layout.resolutions[size_t(level)];
        for (int f = 0; f < layout.feature_dim; ++f) {
            double prod = 1.0;
            for (int plane = 0; plane < HexPlaneLayout::kPlanes; ++plane) {
                auto [a, b] = HexPlaneLayout::kAxes[size_t(plane)];
                double ga = coord[a] * (r - 1), gb = coord[b] * (r - 1);
                int ia = std::min(int(std::floor(ga)), r - 2);
                int ib = std::min(int(std::floor(gb)), r - 2);
                double fa = ga - ia, fb = gb - ib;
                double v00 = values[layout.node_offset(level, plane, ia, ib, f)];
                double v01 = values[layout.node_offset(level, plane, ia, ib + 1, f)];
                double v10 = values[layout.node_offset(level, plane, ia + 1, ib, f)];
                double v11 = values[layout.node_offset(level, plane, ia + 1, ib + 1, f)];
                prod *= v00 * (1 - fa) * (1 - fb) + v10 * fa * (1 - fb) + v01 * (1 - fa) * fb +
                        v11 * fa * fb;
            }
            out.push_back(prod);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("constant-one planes produce an all-ones fused feature") {
    HexPlaneLayout layout;
    layout.feature_dim = 3;
    layout.resolutions = {4, 8};
    std::vector<double> values(layout.total_values(), 1.0);
    auto f = hexplane_query<double>(layout, values, {0.3, -0.7, 0.2}, 0.55);
    REQUIRE(f.size() == 6);
    for (double v : f) CHECK(v == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("query at a grid node returns the product of node features") {
    HexPlaneLayout layout;
    layout.feature_dim = 2;
    layout.resolutions = {4};
    Rng rng(5);
    std::vector<double> values = init_hexplane(layout, rng, 0.3);

    // node indices (x,y,z,t) = (2,1,3,0); map back to world/time coordinates
    int idx[4] = {2, 1, 3, 0};
    auto coord_of = [&](int i, double lo, double hi) { return lo + (hi - lo) * i / 3.0; };
    Vec3d x = {coord_of(idx[0], layout.lo.x, layout.hi.x),
               coord_of(idx[1], layout.lo.y, layout.hi.y),
               coord_of(idx[2], layout.lo.z, layout.hi.z)};
    double t = coord_of(idx[3], layout.t0, layout.t1);

    auto f = hexplane_query<double>(layout, values, x, t);
    REQUIRE(f.size() == 2);
    for (int c = 0; c < 2; ++c) {
        double want = 1.0;
        for (int plane = 0; plane < HexPlaneLayout::kPlanes; ++plane) {
            auto [a, b] = HexPlaneLayout::kAxes[size_t(plane)];
            want *= values[layout.node_offset(0, plane, idx[a], idx[b], c)];
        }
        CHECK(f[size_t(c)] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("random queries match an independent interpolation oracle") {
    HexPlaneLayout layout;
    layout.feature_dim = 8;
    layout.resolutions = {16, 32};
    layout.lo = {-2, -1, -3};
    layout.hi = {2, 3, 1};
    layout.t0 = 0;
    layout.t1 = 1;
    Rng rng(99);
    std::vector<double> values = init_hexplane(layout, rng);

    for (int q = 0; q < 50; ++q) {
        Vec3d x = {rng.uniform(-2.5, 2.5), rng.uniform(-1.5, 3.5), rng.uniform(-3.5, 1.5)};
        double t = rng.uniform(-0.2, 1.2);  // also exercises clamping
        auto got = hexplane_query<double>(layout, values, x, t);
        auto want = query_oracle(layout, values, x, t);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("queries outside the box equal the boundary value") {
    HexPlaneLayout layout;
    layout.feature_dim = 2;
    layout.resolutions = {4};
    Rng rng(1);
    std::vector<double> values = init_hexplane(layout, rng);
    auto inside = hexplane_query<double>(layout, values, {-1.0, 0.2, 0.1}, 0.5);
    auto outside = hexplane_query<double>(layout, values, {-7.0, 0.2, 0.1}, 0.5);
    for (size_t i = 0; i < inside.size(); ++i) CHECK(inside[i] == outside[i]);
}

TEST_CASE("a fine sweep shows no jumps (piecewise-bilinear continuity)") {
    HexPlaneLayout layout;
    layout.feature_dim = 4;
    layout.resolutions = {16, 32};
    Rng rng(12);
    std::vector<double> values = init_hexplane(layout, rng);

    double step = 1e-3;
    std::vector<double> prev;
    double max_jump = 0.0;
    for (double x = -1.0; x <= 1.0; x += step) {
        auto f = hexplane_query<double>(layout, values, {x, 0.31, -0.44}, 0.62);
        if (!prev.empty()) {
            for (size_t i = 0; i < f.size(); ++i) {
                max_jump = std::max(max_jump, std::abs(f[i] - prev[i]));
            }
        }
        prev = f;
    }
    // slope is bounded by node differences (~0.2) * grid density; far below this
    CHECK(max_jump < 0.05);
}

TEST_CASE("tape gradients of a query match finite differences") {
    HexPlaneLayout layout;
    layout.feature_dim = 2;
    layout.resolutions = {4};
    Rng rng(3);
    std::vector<double> values = init_hexplane(layout, rng);
    Vec3d x0 = {0.123, -0.417, 0.256};
    double t0 = 0.4003;

    Tape tape;
    TapeScope scope(tape);
    std::vector<Var> leaves;
    for (double v : values) leaves.push_back(Var::leaf(v));
    Vec3<Var> x = {Var::leaf(x0.x), Var::leaf(x0.y), Var::leaf(x0.z)};
    auto f = hexplane_query<Var>(layout, leaves, x, Var(t0));
    Var loss = f[0] * f[0] + 2.0 * f[1];
    auto adj = tape.backward(loss.idx);

    double h = 1e-6;
    auto eval = [&](const std::vector<double>& vals, const Vec3d& xx) {
        auto g = hexplane_query<double>(layout, vals, xx, t0);
        return g[0] * g[0] + 2.0 * g[1];
    };
    // a few feature-value entries
    for (size_t i : {size_t(0), size_t(37), size_t(100)}) {
        std::vector<double> vp = values, vm = values;
        vp[i] += h;
        vm[i] -= h;
        double fd = (eval(vp, x0) - eval(vm, x0)) / (2 * h);
        CHECK(adj[i] == doctest::Approx(fd).epsilon(1e-5));
    }
    // the position inputs
    for (int a = 0; a < 3; ++a) {
        Vec3d xp = x0, xm = x0;
        xp[a] += h;
        xm[a] -= h;
        double fd = (eval(values, xp) - eval(values, xm)) / (2 * h);
        CHECK(adj[size_t(x[a].idx)] == doctest::Approx(fd).epsilon(1e-5));
    }
}

// ------------------------------------------------------------------------ //
//  MLP                                                                      //
// ------------------------------------------------------------------------ //

TEST_CASE("mlp layout accounting") {
    MlpLayout layout{{4, 8, 8}};
    CHECK(layout.num_layers() == 2);
    CHECK(layout.layer_weights(0) == 4 * 8 + 8);
    CHECK(layout.layer_weights(1) == 8 * 8 + 8);
    CHECK(layout.weight_count() == 40 + 72);
    CHECK_THROWS_AS(MlpLayout{{3}}.validate(), std::domain_error);
}

TEST_CASE("tiny network forward matches hand computation") {
    // widths {2, 2, 1}: y = W1 * tanh(W0 x + b0) + b1
    MlpLayout layout{{2, 2, 1}};
    std::vector<double> w = {
        0.5, -1.0,  // W0 row 0
        2.0, 0.25,  // W0 row 1
        0.1, -0.2,  // b0
        1.5, -0.5,  // W1
        0.75,       // b1
    };
    std::vector<double> x = {0.3, -0.6};
    double h0 = std::tanh(0.5 * 0.3 + (-1.0) * (-0.6) + 0.1);
    double h1 = std::tanh(2.0 * 0.3 + 0.25 * (-0.6) - 0.2);
    double want = 1.5 * h0 - 0.5 * h1 + 0.75;
    auto y = mlp_forward<double>(layout, w, x);
    REQUIRE(y.size() == 1);
    CHECK(y[0] == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("zero-initialized final layer outputs exactly zero") {
    MlpLayout layout{{3, 16, 4}};
    Rng rng(7);
    auto w = init_mlp(layout, rng, true);
    std::vector<double> x = {0.4, -1.2, 2.2};
    auto y = mlp_forward<double>(layout, w, x);
    for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("initialization is deterministic in the seed") {
    MlpLayout layout{{5, 8, 2}};
    Rng a(42), b(42), c(43);
    auto wa = init_mlp(layout, a, false);
    auto wb = init_mlp(layout, b, false);
    auto wc = init_mlp(layout, c, false);
    CHECK(wa == wb);
    CHECK(wa != wc);
}

TEST_CASE("mlp rejects mismatched buffers") {
    MlpLayout layout{{2, 2}};
    std::vector<double> w(5, 0.0), x(2, 0.0);
    CHECK_THROWS_AS(mlp_forward<double>(layout, std::span<const double>(w).subspan(0, 4), x),
                    std::domain_error);
    std::vector<double> bad_x(3, 0.0);
    std::vector<double> w6(6, 0.0);
    CHECK_THROWS_AS(mlp_forward<double>(layout, w6, bad_x), std::domain_error);
}
