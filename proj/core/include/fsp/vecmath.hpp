#pragma once

#include <cmath>
#include <cstddef>

// Small fixed-size linear algebra, templated on the scalar so the same
// geometry code runs on plain doubles and on tape-recorded variables.

namespace fsp {

using std::abs;
using std::exp;
using std::log;
using std::sqrt;

template <class T>
struct Vec2 {
    T x{}, y{};

    Vec2() = default;
    Vec2(T x_, T y_) : x(x_), y(y_) {}

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(const T& s) const { return {x * s, y * s}; }
    Vec2 operator-() const { return {-x, -y}; }
    Vec2& operator+=(const Vec2& o) { x = x + o.x; y = y + o.y; return *this; }

    T dot(const Vec2& o) const { return x * o.x + y * o.y; }
    T squared_norm() const { return dot(*this); }
    T norm() const { return sqrt(squared_norm()); }
};

template <class T>
struct Vec3 {
    T x{}, y{}, z{};

    Vec3() = default;
    Vec3(T x_, T y_, T z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(const T& s) const { return {x * s, y * s, z * s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) { x = x + o.x; y = y + o.y; z = z + o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x = x - o.x; y = y - o.y; z = z - o.z; return *this; }

    T dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    T squared_norm() const { return dot(*this); }
    T norm() const { return sqrt(squared_norm()); }
    Vec3 normalized() const {
        T n = norm();
        return {x / n, y / n, z / n};
    }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    Vec3 cwise(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }

    T operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    T& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
};

template <class T>
Vec3<T> operator*(const T& s, const Vec3<T>& v) { return v * s; }

// Row-major 2x2 symmetric-friendly matrix.
template <class T>
struct Mat2 {
    T a{}, b{}, c{}, d{};  // [[a, b], [c, d]]

    static Mat2 identity() { return {T(1), T(0), T(0), T(1)}; }

    Vec2<T> operator*(const Vec2<T>& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
    Mat2 operator+(const Mat2& o) const { return {a + o.a, b + o.b, c + o.c, d + o.d}; }
    T det() const { return a * d - b * c; }
    Mat2 inverse() const {
        T id = T(1) / det();
        return {d * id, -b * id, -c * id, a * id};
    }
};

// Row-major 3x3.
template <class T>
struct Mat3 {
    T m[3][3] = {};

    static Mat3 identity() {
        Mat3 r;
        r.m[0][0] = r.m[1][1] = r.m[2][2] = T(1);
        return r;
    }
    static Mat3 from_rows(const Vec3<T>& r0, const Vec3<T>& r1, const Vec3<T>& r2) {
        Mat3 r;
        r.m[0][0] = r0.x; r.m[0][1] = r0.y; r.m[0][2] = r0.z;
        r.m[1][0] = r1.x; r.m[1][1] = r1.y; r.m[1][2] = r1.z;
        r.m[2][0] = r2.x; r.m[2][1] = r2.y; r.m[2][2] = r2.z;
        return r;
    }
    static Mat3 diag(const Vec3<T>& d) {
        Mat3 r;
        r.m[0][0] = d.x; r.m[1][1] = d.y; r.m[2][2] = d.z;
        return r;
    }

    Vec3<T> row(int i) const { return {m[i][0], m[i][1], m[i][2]}; }
    Vec3<T> col(int j) const { return {m[0][j], m[1][j], m[2][j]}; }

    Vec3<T> operator*(const Vec3<T>& v) const {
        return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                r.m[i][j] = m[i][0] * o.m[0][j] + m[i][1] * o.m[1][j] + m[i][2] * o.m[2][j];
        return r;
    }
    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[i][j] + o.m[i][j];
        return r;
    }
    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
        return r;
    }
    T det() const {
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
               m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    }
    Mat3 inverse() const {
        Mat3 r;
        T id = T(1) / det();
        r.m[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * id;
        r.m[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * id;
        r.m[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * id;
        r.m[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * id;
        r.m[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * id;
        r.m[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * id;
        r.m[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * id;
        r.m[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * id;
        r.m[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * id;
        return r;
    }
};

// Unit-norm convention: rotation helpers expect a normalized quaternion;
// callers that optimize raw coefficients normalize first.
template <class T>
struct Quat {
    T w{}, x{}, y{}, z{};

    Quat() : w(T(1)) {}
    Quat(T w_, T x_, T y_, T z_) : w(w_), x(x_), y(y_), z(z_) {}

    static Quat identity() { return {T(1), T(0), T(0), T(0)}; }

    T squared_norm() const { return w * w + x * x + y * y + z * z; }
    T norm() const { return sqrt(squared_norm()); }
    Quat normalized() const {
        T n = norm();
        return {w / n, x / n, y / n, z / n};
    }
    Quat operator+(const Quat& o) const { return {w + o.w, x + o.x, y + o.y, z + o.z}; }
    // Hamilton product.
    Quat operator*(const Quat& o) const {
        return {w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w};
    }
};

// Rotation matrix of a unit quaternion.
template <class T>
Mat3<T> rotation_matrix(const Quat<T>& q) {
    const T &w = q.w, &x = q.x, &y = q.y, &z = q.z;
    Mat3<T> r;
    r.m[0][0] = T(1) - T(2) * (y * y + z * z);
    r.m[0][1] = T(2) * (x * y - w * z);
    r.m[0][2] = T(2) * (x * z + w * y);
    r.m[1][0] = T(2) * (x * y + w * z);
    r.m[1][1] = T(1) - T(2) * (x * x + z * z);
    r.m[1][2] = T(2) * (y * z - w * x);
    r.m[2][0] = T(2) * (x * z - w * y);
    r.m[2][1] = T(2) * (y * z + w * x);
    r.m[2][2] = T(1) - T(2) * (x * x + y * y);
    return r;
}

using Vec2d = Vec2<double>;
using Vec3d = Vec3<double>;
using Mat2d = Mat2<double>;
using Mat3d = Mat3<double>;
using Quatd = Quat<double>;

}  // namespace fsp
