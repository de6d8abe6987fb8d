#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fsp/param.hpp"
#include "fsp/tape.hpp"

namespace fsp {

// Finite-difference verification of reverse-mode gradients.
struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;                               // e.g. "centers[5]"
    double worst_analytic = 0.0, worst_fd = 0.0;           // gradients at the worst entry
    std::vector<std::pair<std::string, double>> segments;  // per-segment max rel. error
    double loss = 0.0;
    double tolerance = 0.0;

    bool passed() const { return max_rel_error <= tolerance; }

    std::string to_text() const {
        std::string out = "gradient check: loss = " + std::to_string(loss) + "\n";
        for (const auto& [name, err] : segments) {
            out += "  " + name + ": max rel. error = " + std::to_string(err) + "\n";
        }
        out += "  worst: " + (worst_param.empty() ? std::string("<none>") : worst_param) +
               " (analytic " + std::to_string(worst_analytic) + ", fd " +
               std::to_string(worst_fd) + ")\n";
        out += std::string("  result: ") + (passed() ? "PASS" : "FAIL") + " (max " +
               std::to_string(max_rel_error) + " vs tolerance " + std::to_string(tolerance) + ")\n";
        return out;
    }
};

using LossFn = std::function<Var(std::span<const Var>)>;

namespace detail {
inline double eval_loss_value(const LossFn& f, const ParamSet& params) {
    Tape tape;
    TapeScope scope(tape);
    std::vector<Var> leaves = params.make_leaves();
    return f(leaves).value();
}
}  // namespace detail

// Compare reverse-mode gradients of `f` against central finite differences,
// entry by entry. Relative error uses |g - g_fd| / max(|g_fd|, 1e-8). The
// loss must be deterministic: two evaluations at the same point must agree
// bit-for-bit, otherwise this raises instead of reporting noise as error.
inline GradCheckReport grad_check(const LossFn& f, ParamSet& params, double step = 1e-4,
                                  double tolerance = 1e-4) {
    if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be > 0");

    double v0 = detail::eval_loss_value(f, params);
    double v1 = detail::eval_loss_value(f, params);
    if (std::memcmp(&v0, &v1, sizeof v0) != 0) {
        throw std::runtime_error("grad_check: loss is not deterministic (" + std::to_string(v0) +
                                 " vs " + std::to_string(v1) + ")");
    }

    // analytic pass
    std::vector<double> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        std::vector<Var> leaves = params.make_leaves();
        Var loss = f(leaves);
        if (loss.is_const()) {
            analytic.assign(params.size(), 0.0);  // loss did not touch the tape
        } else {
            std::vector<double> adjoints = tape.backward(loss.idx);
            analytic = extract_gradients(params, adjoints);
        }
    }

    GradCheckReport report;
    report.loss = v0;
    report.tolerance = tolerance;
    for (const ParamSegment& seg : params.segments()) report.segments.push_back({seg.name, 0.0});

    std::span<double> x = params.values();
    for (size_t i = 0; i < params.size(); ++i) {
        double saved = x[i];
        x[i] = saved + step;
        double fp = detail::eval_loss_value(f, params);
        x[i] = saved - step;
        double fm = detail::eval_loss_value(f, params);
        x[i] = saved;

        double fd = (fp - fm) / (2.0 * step);
        double rel = std::abs(analytic[i] - fd) / std::max(std::abs(fd), 1e-8);
        for (auto& [name, err] : report.segments) {
            const ParamSegment& seg = params.segment(name);
            if (i >= seg.offset && i < seg.offset + seg.length) {
                err = std::max(err, rel);
                break;
            }
        }
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_param = params.param_name(i);
            report.worst_analytic = analytic[i];
            report.worst_fd = fd;
        }
    }
    return report;
}

}  // namespace fsp
