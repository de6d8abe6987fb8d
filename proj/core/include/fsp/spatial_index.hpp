#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "fsp/vecmath.hpp"

namespace fsp {

// Exact k-nearest-neighbor queries over a fixed point set (Gaussian centers).
// Median-split kd-tree; queries prune subtrees by slab distance, so results
// are exact, not approximate. Ties are broken toward the smaller point index
// for deterministic output.
class SpatialIndex {
public:
    struct Hit {
        int32_t index;
        double dist2;
    };

    explicit SpatialIndex(std::span<const Vec3d> points) : points_(points.begin(), points.end()) {
        if (points_.empty()) throw std::domain_error("SpatialIndex: empty point set");
        order_.resize(points_.size());
        std::iota(order_.begin(), order_.end(), 0);
        nodes_.reserve(points_.size());
        root_ = build(0, int32_t(points_.size()));
    }

    size_t size() const { return points_.size(); }

    // The k nearest points to `query`, sorted by ascending distance
    // (ties: ascending index). Returns fewer than k only when the set is
    // smaller than k.
    std::vector<Hit> nearest(const Vec3d& query, size_t k) const {
        if (k == 0) return {};
        k = std::min(k, points_.size());
        std::vector<Hit> heap;  // max-heap on (dist2, index)
        heap.reserve(k + 1);
        search(root_, query, k, heap);
        std::sort(heap.begin(), heap.end(), [](const Hit& a, const Hit& b) {
            if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
            return a.index < b.index;
        });
        return heap;
    }

private:
    struct Node {
        int32_t point = -1;     // index into points_
        int32_t left = -1, right = -1;
        int8_t axis = 0;
    };

    // lexicographic (dist2, index); the heap front is the current worst hit,
    // so on distance ties the larger index is evicted first
    static bool heap_less(const Hit& a, const Hit& b) {
        if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
        return a.index < b.index;
    }

    int32_t build(int32_t lo, int32_t hi) {
        if (lo >= hi) return -1;
        // split along the axis of largest spread
        Vec3d mn = points_[order_[lo]], mx = mn;
        for (int32_t i = lo + 1; i < hi; ++i) {
            const Vec3d& p = points_[order_[i]];
            mn = {std::min(mn.x, p.x), std::min(mn.y, p.y), std::min(mn.z, p.z)};
            mx = {std::max(mx.x, p.x), std::max(mx.y, p.y), std::max(mx.z, p.z)};
        }
        Vec3d spread = mx - mn;
        int8_t axis = 0;
        if (spread.y > spread.x) axis = 1;
        if (spread.z > spread[axis]) axis = 2;

        int32_t mid = (lo + hi) / 2;
        std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                         [&](int32_t a, int32_t b) {
                             double pa = points_[a][axis], pb = points_[b][axis];
                             if (pa != pb) return pa < pb;
                             return a < b;
                         });
        Node node;
        node.point = order_[mid];
        node.axis = axis;
        int32_t self = int32_t(nodes_.size());
        nodes_.push_back(node);
        int32_t left = build(lo, mid);
        int32_t right = build(mid + 1, hi);
        nodes_[self].left = left;
        nodes_[self].right = right;
        return self;
    }

    void consider(int32_t point, const Vec3d& query, size_t k, std::vector<Hit>& heap) const {
        double d2 = (points_[point] - query).squared_norm();
        Hit hit{point, d2};
        if (heap.size() < k) {
            heap.push_back(hit);
            std::push_heap(heap.begin(), heap.end(), heap_less);
        } else if (heap_less(hit, heap.front())) {
            std::pop_heap(heap.begin(), heap.end(), heap_less);
            heap.back() = hit;
            std::push_heap(heap.begin(), heap.end(), heap_less);
        }
    }

    void search(int32_t node_idx, const Vec3d& query, size_t k, std::vector<Hit>& heap) const {
        if (node_idx < 0) return;
        const Node& node = nodes_[node_idx];
        consider(node.point, query, k, heap);

        double delta = query[node.axis] - points_[node.point][node.axis];
        int32_t near = delta <= 0.0 ? node.left : node.right;
        int32_t far = delta <= 0.0 ? node.right : node.left;
        search(near, query, k, heap);
        // the far slab can only help if the splitting plane is closer than the
        // current worst hit (or the heap is not yet full)
        if (heap.size() < k || delta * delta <= heap.front().dist2) search(far, query, k, heap);
    }

    std::vector<Vec3d> points_;
    std::vector<int32_t> order_;  // scratch during build
    std::vector<Node> nodes_;
    int32_t root_ = -1;
};

}  // namespace fsp
