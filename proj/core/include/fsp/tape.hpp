#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsp {

struct TapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Reverse-mode tape. Each node stores its forward value and the local
// partial derivatives with respect to its parents, so the backward pass is a
// single reverse sweep with no op dispatch. One tape per recording; tapes are
// never shared across workers.
class Tape {
public:
    Tape() { clear(); }

    void clear() {
        value_.clear();
        edge_off_.assign(1, 0);
        edge_parent_.clear();
        edge_weight_.clear();
        stage_.clear();
    }

    size_t num_nodes() const { return value_.size(); }
    size_t num_edges() const { return edge_parent_.size(); }
    double value(int32_t idx) const { return value_[idx]; }

    // Label subsequent nodes for diagnostics of non-finite intermediates.
    void set_stage(std::string stage) { stage_ = std::move(stage); }
    const std::string& stage() const { return stage_; }

    int32_t leaf(double v) {
        check(v);
        value_.push_back(v);
        edge_off_.push_back(uint32_t(edge_parent_.size()));
        return int32_t(value_.size()) - 1;
    }

    int32_t node1(double v, int32_t p, double w) {
        check(v);
        value_.push_back(v);
        edge_parent_.push_back(p);
        edge_weight_.push_back(w);
        edge_off_.push_back(uint32_t(edge_parent_.size()));
        return int32_t(value_.size()) - 1;
    }

    int32_t node2(double v, int32_t p0, double w0, int32_t p1, double w1) {
        check(v);
        value_.push_back(v);
        edge_parent_.push_back(p0);
        edge_weight_.push_back(w0);
        edge_parent_.push_back(p1);
        edge_weight_.push_back(w1);
        edge_off_.push_back(uint32_t(edge_parent_.size()));
        return int32_t(value_.size()) - 1;
    }

    // Fused node with an arbitrary number of parents (dot products, sums).
    int32_t begin_node(double v) {
        check(v);
        value_.push_back(v);
        return int32_t(value_.size()) - 1;
    }
    void add_edge(int32_t parent, double weight) {
        edge_parent_.push_back(parent);
        edge_weight_.push_back(weight);
    }
    void end_node() { edge_off_.push_back(uint32_t(edge_parent_.size())); }

    // Adjoints of every node with respect to the scalar rooted at `root`.
    std::vector<double> backward(int32_t root) const {
        if (root < 0 || size_t(root) >= value_.size())
            throw TapeError("Tape::backward: root index out of range");
        std::vector<double> adj(value_.size(), 0.0);
        adj[root] = 1.0;
        for (int32_t i = root; i >= 0; --i) {
            double a = adj[i];
            if (a == 0.0) continue;
            for (uint32_t e = edge_off_[i]; e < edge_off_[i + 1]; ++e)
                adj[edge_parent_[e]] += a * edge_weight_[e];
        }
        return adj;
    }

private:
    void check(double v) const {
        if (!std::isfinite(v))
            throw TapeError("non-finite value recorded at node " + std::to_string(value_.size()) +
                            (stage_.empty() ? std::string() : " in stage '" + stage_ + "'"));
    }

    std::vector<double> value_;
    std::vector<uint32_t> edge_off_;  // size num_nodes+1
    std::vector<int32_t> edge_parent_;
    std::vector<double> edge_weight_;
    std::string stage_;
};

// Active tape for Var recording, scoped RAII-style.
Tape* active_tape();

class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

// Differentiable scalar. idx < 0 marks a constant; constants never touch the
// tape, so frozen parameters mixed into a recording cost nothing.
struct Var {
    double v = 0.0;
    int32_t idx = -1;

    Var() = default;
    Var(double c) : v(c) {}
    Var(double value, int32_t index) : v(value), idx(index) {}

    static Var leaf(double value) { return Var(value, active_tape()->leaf(value)); }

    bool is_const() const { return idx < 0; }
    double value() const { return v; }
};

namespace detail {
inline Var record1(double v, const Var& a, double da) {
    if (a.is_const()) return Var(v);
    return Var(v, active_tape()->node1(v, a.idx, da));
}
inline Var record2(double v, const Var& a, double da, const Var& b, double db) {
    const bool ca = a.is_const(), cb = b.is_const();
    if (ca && cb) return Var(v);
    if (ca) return Var(v, active_tape()->node1(v, b.idx, db));
    if (cb) return Var(v, active_tape()->node1(v, a.idx, da));
    return Var(v, active_tape()->node2(v, a.idx, da, b.idx, db));
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::record2(a.v + b.v, a, 1.0, b, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return detail::record2(a.v - b.v, a, 1.0, b, -1.0); }
inline Var operator*(const Var& a, const Var& b) { return detail::record2(a.v * b.v, a, b.v, b, a.v); }
inline Var operator/(const Var& a, const Var& b) {
    // The value must be the true quotient (bit-identical to the double code
    // path); only the partials may use the reciprocal.
    double q = a.v / b.v;
    double inv = 1.0 / b.v;
    return detail::record2(q, a, inv, b, -q * inv);
}
inline Var operator-(const Var& a) { return detail::record1(-a.v, a, -1.0); }
inline Var& operator+=(Var& a, const Var& b) { a = a + b; return a; }
inline Var& operator-=(Var& a, const Var& b) { a = a - b; return a; }
inline Var& operator*=(Var& a, const Var& b) { a = a * b; return a; }

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
inline bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
inline bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }

inline Var exp(const Var& a) {
    double e = std::exp(a.v);
    return detail::record1(e, a, e);
}
inline Var log(const Var& a) { return detail::record1(std::log(a.v), a, 1.0 / a.v); }
inline Var sqrt(const Var& a) {
    double s = std::sqrt(a.v);
    return detail::record1(s, a, 0.5 / s);
}
inline Var abs(const Var& a) {
    // subgradient 0 at the kink
    double s = a.v > 0.0 ? 1.0 : (a.v < 0.0 ? -1.0 : 0.0);
    return detail::record1(std::abs(a.v), a, s);
}
inline Var tanh(const Var& a) {
    double t = std::tanh(a.v);
    return detail::record1(t, a, 1.0 - t * t);
}
inline Var sigmoid(const Var& a) {
    double s = 1.0 / (1.0 + std::exp(-a.v));
    return detail::record1(s, a, s * (1.0 - s));
}
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double tanh(double x) { return std::tanh(x); }

inline Var max(const Var& a, const Var& b) { return a.v >= b.v ? a : b; }
inline Var min(const Var& a, const Var& b) { return a.v <= b.v ? a : b; }
inline double max(double a, double b) { return a >= b ? a : b; }
inline double min(double a, double b) { return a <= b ? a : b; }

// clamp with zero gradient outside [lo, hi]
inline Var clamp(const Var& a, double lo, double hi) {
    if (a.v < lo) return Var(lo);
    if (a.v > hi) return Var(hi);
    return a;
}
inline double clamp(double a, double lo, double hi) { return a < lo ? lo : (a > hi ? hi : a); }

// Fused inner product; one node with edges into both operand vectors.
inline Var dot(std::span<const Var> a, std::span<const Var> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i].v * b[i].v;
    Tape* t = active_tape();
    int32_t idx = t->begin_node(s);
    for (size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_const()) t->add_edge(a[i].idx, b[i].v);
        if (!b[i].is_const()) t->add_edge(b[i].idx, a[i].v);
    }
    t->end_node();
    return Var(s, idx);
}

inline Var sum(std::span<const Var> a) {
    double s = 0.0;
    for (const Var& x : a) s += x.v;
    Tape* t = active_tape();
    int32_t idx = t->begin_node(s);
    for (const Var& x : a)
        if (!x.is_const()) t->add_edge(x.idx, 1.0);
    t->end_node();
    return Var(s, idx);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double sum(std::span<const double> a) {
    double s = 0.0;
    for (double x : a) s += x;
    return s;
}

// Detach: forward value only, no gradient path.
inline double detach(const Var& a) { return a.v; }
inline double detach(double a) { return a; }

inline double value_of(const Var& a) { return a.v; }
inline double value_of(double a) { return a; }

}  // namespace fsp
