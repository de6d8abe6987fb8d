#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "fsp/vecmath.hpp"

namespace fsp {

// Dense row-major H x W scalar image.
template <class T>
class Image {
public:
    Image() = default;
    Image(int width, int height, T fill = T{})
        : w_(width), h_(height), data_(size_t(width) * size_t(height), fill) {
        if (width < 0 || height < 0) throw std::invalid_argument("Image: negative size");
    }

    int width() const { return w_; }
    int height() const { return h_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& at(int x, int y) { return data_[size_t(y) * w_ + x]; }
    const T& at(int x, int y) const { return data_[size_t(y) * w_ + x]; }
    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    template <class U>
    bool same_shape(const Image<U>& o) const {
        return w_ == o.width() && h_ == o.height();
    }

private:
    int w_ = 0, h_ = 0;
    std::vector<T> data_;
};

using Imaged = Image<double>;
using Image3d = Image<Vec3d>;

// 2D flow field with a per-pixel validity mask. Invalid pixels are excluded
// from every loss and from statistics.
struct FlowField {
    Image<Vec2d> uv;
    Image<uint8_t> valid;

    FlowField() = default;
    FlowField(int w, int h, bool all_valid = true)
        : uv(w, h), valid(w, h, all_valid ? uint8_t(1) : uint8_t(0)) {}

    int width() const { return uv.width(); }
    int height() const { return uv.height(); }
};

}  // namespace fsp
