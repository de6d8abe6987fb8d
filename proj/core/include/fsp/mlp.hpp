#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "fsp/rng.hpp"
#include "fsp/tape.hpp"

namespace fsp {

// Dense multilayer perceptron with tanh hidden activations and a linear
// output layer. Weights live in one flat buffer: per layer, a row-major
// (out x in) matrix followed by the bias vector.
struct MlpLayout {
    std::vector<int> widths;  // {input, hidden..., output}

    void validate() const {
        if (widths.size() < 2) throw std::domain_error("MlpLayout: need at least in/out widths");
        for (int w : widths)
            if (w <= 0) throw std::domain_error("MlpLayout: widths must be positive");
    }

    size_t num_layers() const { return widths.size() - 1; }
    size_t layer_weights(size_t layer) const {
        return size_t(widths[layer]) * size_t(widths[layer + 1]) + size_t(widths[layer + 1]);
    }
    size_t layer_offset(size_t layer) const {
        size_t off = 0;
        for (size_t l = 0; l < layer; ++l) off += layer_weights(l);
        return off;
    }
    size_t weight_count() const { return layer_offset(num_layers()); }
};

// Uniform fan-based init for the trunk; `zero_final` zeroes the last layer
// (weights and bias) so heads start as the identity contribution.
inline std::vector<double> init_mlp(const MlpLayout& layout, Rng& rng, bool zero_final) {
    layout.validate();
    std::vector<double> w(layout.weight_count(), 0.0);
    for (size_t layer = 0; layer < layout.num_layers(); ++layer) {
        if (zero_final && layer == layout.num_layers() - 1) break;
        int fan_in = layout.widths[layer], fan_out = layout.widths[layer + 1];
        double bound = std::sqrt(6.0 / double(fan_in + fan_out));
        size_t off = layout.layer_offset(layer);
        for (size_t i = 0; i < size_t(fan_in) * size_t(fan_out); ++i) {
            w[off + i] = rng.uniform(-bound, bound);
        }
        // biases stay zero
    }
    return w;
}

template <class T>
std::vector<T> mlp_forward(const MlpLayout& layout, std::span<const T> weights,
                           std::span<const T> input) {
    layout.validate();
    if (weights.size() != layout.weight_count()) {
        throw std::domain_error("mlp_forward: weight buffer does not match layout");
    }
    if (input.size() != size_t(layout.widths[0])) {
        throw std::domain_error("mlp_forward: input width mismatch");
    }
    std::vector<T> act(input.begin(), input.end());
    for (size_t layer = 0; layer < layout.num_layers(); ++layer) {
        int in = layout.widths[layer], out = layout.widths[layer + 1];
        size_t off = layout.layer_offset(layer);
        std::vector<T> next(static_cast<size_t>(out));
        for (int o = 0; o < out; ++o) {
            std::span<const T> row = weights.subspan(off + size_t(o) * size_t(in), size_t(in));
            T pre = dot(row, std::span<const T>(act)) +
                    weights[off + size_t(in) * size_t(out) + size_t(o)];
            next[size_t(o)] = layer + 1 < layout.num_layers() ? tanh(pre) : pre;
        }
        act = std::move(next);
    }
    return act;
}

}  // namespace fsp
