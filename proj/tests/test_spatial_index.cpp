#include <doctest.h>

#include <algorithm>
#include <vector>

#include <fsp/rng.hpp>
#include <fsp/spatial_index.hpp>
#include <fsp/vecmath.hpp>

using namespace fsp;

namespace {

// Reference: full scan, sorted by (distance, index).
std::vector<SpatialIndex::Hit> brute_nearest(const std::vector<Vec3d>& pts, const Vec3d& q,
                                             size_t k) {
    std::vector<SpatialIndex::Hit> all;
    for (size_t i = 0; i < pts.size(); ++i) all.push_back({int32_t(i), (pts[i] - q).squared_norm()});
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
        return a.index < b.index;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

}  // namespace

TEST_CASE("three collinear points, k=2") {
    std::vector<Vec3d> pts = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    SpatialIndex index(pts);
    auto hits = index.nearest({0.9, 0, 0}, 2);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].index == 1);
    CHECK(hits[0].dist2 == doctest::Approx(0.01));
    CHECK(hits[1].index == 0);
    CHECK(hits[1].dist2 == doctest::Approx(0.81));
}

TEST_CASE("matches brute force exactly on random points") {
    Rng rng(42);
    std::vector<Vec3d> pts(200);
    for (auto& p : pts) p = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    SpatialIndex index(pts);
    REQUIRE(index.size() == 200);
    for (int qi = 0; qi < 50; ++qi) {
        Vec3d q = {rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)};
        auto got = index.nearest(q, 5);
        auto want = brute_nearest(pts, q, 5);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].index == want[i].index);
            CHECK(got[i].dist2 == want[i].dist2);  // identical arithmetic, so exact
        }
    }
}

TEST_CASE("k >= n returns everything, distance sorted") {
    Rng rng(7);
    std::vector<Vec3d> pts(9);
    for (auto& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    SpatialIndex index(pts);
    auto hits = index.nearest({0.2, -0.1, 0.4}, 50);
    REQUIRE(hits.size() == 9);
    for (size_t i = 1; i < hits.size(); ++i) CHECK(hits[i - 1].dist2 <= hits[i].dist2);
    std::vector<bool> seen(9, false);
    for (const auto& h : hits) {
        CHECK(!seen[h.index]);
        seen[h.index] = true;
    }
}

TEST_CASE("duplicate points break ties toward the smaller index") {
    std::vector<Vec3d> pts = {{1, 1, 1}, {0, 0, 0}, {1, 1, 1}, {1, 1, 1}};
    SpatialIndex index(pts);
    auto hits = index.nearest({1, 1, 1}, 2);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].index == 0);
    CHECK(hits[1].index == 2);
    CHECK(hits[0].dist2 == 0.0);
    CHECK(hits[1].dist2 == 0.0);
}

TEST_CASE("degenerate geometry still matches brute force") {
    // all points on one plane, many shared coordinates
    std::vector<Vec3d> pts;
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) pts.push_back({double(i), double(j), 0.0});
    SpatialIndex index(pts);
    Rng rng(3);
    for (int qi = 0; qi < 25; ++qi) {
        Vec3d q = {rng.uniform(0, 9), rng.uniform(0, 9), rng.uniform(-1, 1)};
        auto got = index.nearest(q, 7);
        auto want = brute_nearest(pts, q, 7);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].index == want[i].index);
            CHECK(got[i].dist2 == want[i].dist2);
        }
    }
}

TEST_CASE("empty point set is rejected") {
    std::vector<Vec3d> pts;
    CHECK_THROWS_AS(SpatialIndex{pts}, std::domain_error);
}

TEST_CASE("k = 0 yields nothing") {
    std::vector<Vec3d> pts = {{0, 0, 0}};
    SpatialIndex index(pts);
    CHECK(index.nearest({1, 2, 3}, 0).empty());
}
