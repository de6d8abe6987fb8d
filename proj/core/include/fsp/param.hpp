#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fsp/gaussian.hpp"
#include "fsp/tape.hpp"

namespace fsp {

// ---------------------------------------------------------------------------
// Flat parameter storage: one contiguous vector partitioned into named
// segments, each with its own learning rate and freeze toggle. The registry
// (name, offset, length) is the single source of truth for gradient layout,
// optimizer state, and reporting.

struct ParamSegment {
    std::string name;
    size_t offset = 0;
    size_t length = 0;
    double lr = 0.0;
    bool trainable = true;
};

class ParamSet {
public:
    size_t add_segment(std::string name, std::span<const double> init, double lr) {
        for (const auto& s : segments_) {
            if (s.name == name) throw std::invalid_argument("ParamSet: duplicate segment " + name);
        }
        ParamSegment seg;
        seg.name = std::move(name);
        seg.offset = values_.size();
        seg.length = init.size();
        seg.lr = lr;
        segments_.push_back(seg);
        values_.insert(values_.end(), init.begin(), init.end());
        return segments_.size() - 1;
    }

    size_t size() const { return values_.size(); }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    std::span<const ParamSegment> segments() const { return segments_; }

    const ParamSegment& segment(std::string_view name) const {
        for (const auto& s : segments_)
            if (s.name == name) return s;
        throw std::out_of_range("ParamSet: no segment named " + std::string(name));
    }

    bool has_segment(std::string_view name) const {
        for (const auto& s : segments_)
            if (s.name == name) return true;
        return false;
    }

    std::span<double> view(std::string_view name) {
        const ParamSegment& s = segment(name);
        return std::span<double>(values_).subspan(s.offset, s.length);
    }
    std::span<const double> view(std::string_view name) const {
        const ParamSegment& s = segment(name);
        return std::span<const double>(values_).subspan(s.offset, s.length);
    }

    void set_trainable(std::string_view name, bool trainable) {
        for (auto& s : segments_) {
            if (s.name == name) {
                s.trainable = trainable;
                return;
            }
        }
        throw std::out_of_range("ParamSet: no segment named " + std::string(name));
    }

    // Human-readable name of one flat entry, e.g. "centers[17]".
    std::string param_name(size_t index) const {
        for (const auto& s : segments_) {
            if (index >= s.offset && index < s.offset + s.length) {
                return s.name + "[" + std::to_string(index - s.offset) + "]";
            }
        }
        return "<out-of-range>[" + std::to_string(index) + "]";
    }

    // Record one tape leaf per entry, in storage order, so that after
    // backward() the first size() adjoints are exactly this set's gradient.
    // Must be called on a fresh tape.
    std::vector<Var> make_leaves() const {
        std::vector<Var> leaves;
        leaves.reserve(values_.size());
        for (size_t i = 0; i < values_.size(); ++i) {
            Var v = Var::leaf(values_[i]);
            if (size_t(v.idx) != i) {
                throw std::logic_error("ParamSet::make_leaves: tape is not empty");
            }
            leaves.push_back(v);
        }
        return leaves;
    }

private:
    std::vector<double> values_;
    std::vector<ParamSegment> segments_;
};

// Adjoints of a backward pass trimmed to the parameter block, with the
// finiteness contract enforced: a NaN/Inf gradient is a hard failure that
// names the offending parameter.
inline std::vector<double> extract_gradients(const ParamSet& params,
                                             std::span<const double> adjoints) {
    if (adjoints.size() < params.size()) {
        throw std::logic_error("extract_gradients: adjoint vector shorter than parameter set");
    }
    std::vector<double> grad(adjoints.begin(), adjoints.begin() + params.size());
    for (size_t i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad[i])) {
            throw std::runtime_error("non-finite gradient for parameter " + params.param_name(i));
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// First/second-moment adaptive optimizer with per-segment learning rates.
class Adam {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;

    explicit Adam(size_t size = 0) : m_(size, 0.0), v_(size, 0.0) {}

    int64_t steps_taken() const { return t_; }

    void step(ParamSet& params, std::span<const double> grad) {
        if (grad.size() != params.size() || m_.size() != params.size()) {
            throw std::invalid_argument("Adam::step: size mismatch");
        }
        ++t_;
        double c1 = 1.0 - std::pow(beta1, double(t_));
        double c2 = 1.0 - std::pow(beta2, double(t_));
        std::span<double> x = params.values();
        for (const ParamSegment& seg : params.segments()) {
            if (!seg.trainable) continue;  // frozen segments stay bitwise intact
            for (size_t i = seg.offset; i < seg.offset + seg.length; ++i) {
                double g = grad[i];
                m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
                v_[i] = beta2 * v_[i] + (1.0 - beta2) * g * g;
                double mhat = m_[i] / c1;
                double vhat = v_[i] / c2;
                x[i] -= seg.lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    // Rebuild moment vectors after a structural change. source_of_new[i] is
    // the old flat index feeding new entry i, or -1 for a fresh (zero) slot.
    void remap(std::span<const int64_t> source_of_new) {
        std::vector<double> m(source_of_new.size(), 0.0), v(source_of_new.size(), 0.0);
        for (size_t i = 0; i < source_of_new.size(); ++i) {
            int64_t s = source_of_new[i];
            if (s < 0) continue;
            if (size_t(s) >= m_.size()) throw std::out_of_range("Adam::remap: bad source index");
            m[i] = m_[size_t(s)];
            v[i] = v_[size_t(s)];
        }
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    std::vector<double> m_, v_;
    int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Cloud <-> segment packing. Field-major layout (all centers, then all
// rotations, ...) so each field forms one segment with its own learning rate
// and freeze toggle.

namespace seg {
inline constexpr const char* kCenters = "centers";
inline constexpr const char* kRotations = "rotations";
inline constexpr const char* kLogScales = "log_scales";
inline constexpr const char* kOpacityLogits = "opacity_logits";
inline constexpr const char* kSh = "sh";
inline constexpr const char* kLogConfidence = "log_confidence";
}  // namespace seg

struct CloudLearningRates {
    double centers = 1.6e-4;  // multiplied by scene extent by the caller
    double rotations = 1e-3;
    double log_scales = 5e-3;
    double opacity_logits = 5e-2;
    double sh = 2.5e-3;
    double log_confidence = 1e-3;
};

// Append one segment per cloud field (plus confidences when present). All
// Gaussians must share one SH band count.
inline void add_cloud_segments(ParamSet& params, const GaussianCloud& cloud,
                               const CloudLearningRates& lr) {
    size_t n = cloud.size();
    if (n == 0) throw std::domain_error("add_cloud_segments: empty cloud");
    size_t bands = cloud.gaussians[0].sh.size();
    std::vector<double> centers, rotations, log_scales, opacities, sh;
    centers.reserve(3 * n);
    rotations.reserve(4 * n);
    log_scales.reserve(3 * n);
    opacities.reserve(n);
    sh.reserve(3 * bands * n);
    for (const Gaussian3& g : cloud.gaussians) {
        if (g.sh.size() != bands) {
            throw std::domain_error("add_cloud_segments: inconsistent SH band counts");
        }
        centers.insert(centers.end(), {g.center.x, g.center.y, g.center.z});
        rotations.insert(rotations.end(), {g.rotation.w, g.rotation.x, g.rotation.y, g.rotation.z});
        log_scales.insert(log_scales.end(), {g.log_scale.x, g.log_scale.y, g.log_scale.z});
        opacities.push_back(g.opacity_logit);
        for (const Vec3d& c : g.sh) sh.insert(sh.end(), {c.x, c.y, c.z});
    }
    params.add_segment(seg::kCenters, centers, lr.centers);
    params.add_segment(seg::kRotations, rotations, lr.rotations);
    params.add_segment(seg::kLogScales, log_scales, lr.log_scales);
    params.add_segment(seg::kOpacityLogits, opacities, lr.opacity_logits);
    params.add_segment(seg::kSh, sh, lr.sh);
    if (!cloud.log_confidence.empty()) {
        std::vector<double> conf;
        size_t views = cloud.log_confidence[0].size();
        conf.reserve(n * views);
        for (const auto& row : cloud.log_confidence) {
            if (row.size() != views) {
                throw std::domain_error("add_cloud_segments: ragged confidence table");
            }
            conf.insert(conf.end(), row.begin(), row.end());
        }
        params.add_segment(seg::kLogConfidence, conf, lr.log_confidence);
    }
}

// Write current segment values back into the cloud (shapes must match).
inline void params_to_cloud(const ParamSet& params, GaussianCloud& cloud) {
    size_t n = cloud.size();
    auto centers = params.view(seg::kCenters);
    auto rotations = params.view(seg::kRotations);
    auto log_scales = params.view(seg::kLogScales);
    auto opacities = params.view(seg::kOpacityLogits);
    auto sh = params.view(seg::kSh);
    size_t bands = n ? cloud.gaussians[0].sh.size() : 0;
    if (centers.size() != 3 * n || rotations.size() != 4 * n || log_scales.size() != 3 * n ||
        opacities.size() != n || sh.size() != 3 * bands * n) {
        throw std::domain_error("params_to_cloud: segment sizes do not match cloud");
    }
    for (size_t i = 0; i < n; ++i) {
        Gaussian3& g = cloud.gaussians[i];
        g.center = {centers[3 * i], centers[3 * i + 1], centers[3 * i + 2]};
        g.rotation = {rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2],
                      rotations[4 * i + 3]};
        g.log_scale = {log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]};
        g.opacity_logit = opacities[i];
        for (size_t b = 0; b < bands; ++b) {
            g.sh[b] = {sh[3 * (bands * i + b)], sh[3 * (bands * i + b) + 1],
                       sh[3 * (bands * i + b) + 2]};
        }
    }
    if (params.has_segment(seg::kLogConfidence) && !cloud.log_confidence.empty()) {
        auto conf = params.view(seg::kLogConfidence);
        size_t views = cloud.log_confidence[0].size();
        if (conf.size() != n * views) {
            throw std::domain_error("params_to_cloud: confidence segment size mismatch");
        }
        for (size_t i = 0; i < n; ++i) {
            for (size_t v = 0; v < views; ++v) cloud.log_confidence[i][v] = conf[i * views + v];
        }
    }
}

// Rebuild typed Gaussians (double or tape variables) from field spans.
template <class T>
std::vector<Gaussian3T<T>> gaussians_from_segments(std::span<const T> centers,
                                                   std::span<const T> rotations,
                                                   std::span<const T> log_scales,
                                                   std::span<const T> opacity_logits,
                                                   std::span<const T> sh, size_t count,
                                                   size_t sh_bands) {
    if (centers.size() != 3 * count || rotations.size() != 4 * count ||
        log_scales.size() != 3 * count || opacity_logits.size() != count ||
        sh.size() != 3 * sh_bands * count) {
        throw std::domain_error("gaussians_from_segments: span sizes do not match count");
    }
    std::vector<Gaussian3T<T>> out(count);
    for (size_t i = 0; i < count; ++i) {
        Gaussian3T<T>& g = out[i];
        g.center = {centers[3 * i], centers[3 * i + 1], centers[3 * i + 2]};
        g.rotation = {rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2],
                      rotations[4 * i + 3]};
        g.log_scale = {log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]};
        g.opacity_logit = opacity_logits[i];
        g.sh.resize(sh_bands);
        for (size_t b = 0; b < sh_bands; ++b) {
            g.sh[b] = {sh[3 * (sh_bands * i + b)], sh[3 * (sh_bands * i + b) + 1],
                       sh[3 * (sh_bands * i + b) + 2]};
        }
    }
    return out;
}

// Convenience: rebuild typed Gaussians from a leaf vector laid out by
// add_cloud_segments (leaves parallel the flat values).
template <class T>
std::vector<Gaussian3T<T>> gaussians_from_params(const ParamSet& params, std::span<const T> flat,
                                                 size_t count, size_t sh_bands) {
    auto sub = [&](const char* name) {
        const ParamSegment& s = params.segment(name);
        return flat.subspan(s.offset, s.length);
    };
    return gaussians_from_segments<T>(sub(seg::kCenters), sub(seg::kRotations),
                                      sub(seg::kLogScales), sub(seg::kOpacityLogits), sub(seg::kSh),
                                      count, sh_bands);
}

}  // namespace fsp
