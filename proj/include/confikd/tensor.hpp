#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace confikd {

// Dense tensor of rank 0, 1 or 2. Double precision throughout.
struct Tensor {
    std::vector<std::size_t> shape;  // empty => scalar
    std::vector<double> data;

    Tensor() : data(1, 0.0) {}

    static Tensor scalar(double v) {
        Tensor t;
        t.data[0] = v;
        return t;
    }
    static Tensor vec(std::vector<double> v) {
        Tensor t;
        t.shape = {v.size()};
        t.data = std::move(v);
        return t;
    }
    static Tensor mat(std::size_t rows, std::size_t cols, std::vector<double> v) {
        if (v.size() != rows * cols) throw std::invalid_argument("Tensor::mat: size mismatch");
        Tensor t;
        t.shape = {rows, cols};
        t.data = std::move(v);
        return t;
    }
    static Tensor zeros_like(const Tensor& o) {
        Tensor t;
        t.shape = o.shape;
        t.data.assign(o.data.size(), 0.0);
        return t;
    }
    static Tensor zeros(const std::vector<std::size_t>& shape) {
        Tensor t;
        t.shape = shape;
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        t.data.assign(n, 0.0);
        return t;
    }

    std::size_t size() const { return data.size(); }
    bool is_scalar() const { return shape.empty(); }
    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }
    double& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline Vec sub(const Vec& a, const Vec& b) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline Vec add(const Vec& a, const Vec& b) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

inline Vec scale(const Vec& a, double s) {
    Vec r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] * s;
    return r;
}

// Row-major dense matrix helpers for small fixed problems (decoders etc).
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;  // row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    Vec mul(const Vec& x) const {
        Vec y(rows, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += a[r * cols + c] * x[c];
            y[r] = s;
        }
        return y;
    }

    Matrix transpose() const {
        Matrix t(cols, rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) t(c, r) = (*this)(r, c);
        return t;
    }
};

// Gaussian elimination with partial pivoting. Square systems only.
inline Matrix invert_matrix(const Matrix& m) {
    if (m.rows != m.cols) throw std::invalid_argument("invert_matrix: not square");
    const std::size_t n = m.rows;
    Matrix a = m;
    Matrix inv = Matrix::identity(n);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(a(r, col)) > std::fabs(a(piv, col))) piv = r;
        if (std::fabs(a(piv, col)) < 1e-14) throw std::runtime_error("invert_matrix: singular");
        if (piv != col) {
            for (std::size_t c = 0; c < n; ++c) {
                std::swap(a(col, c), a(piv, c));
                std::swap(inv(col, c), inv(piv, c));
            }
        }
        const double d = a(col, col);
        for (std::size_t c = 0; c < n; ++c) {
            a(col, c) /= d;
            inv(col, c) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a(r, col);
            if (f == 0.0) continue;
            for (std::size_t c = 0; c < n; ++c) {
                a(r, c) -= f * a(col, c);
                inv(r, c) -= f * inv(col, c);
            }
        }
    }
    return inv;
}

}  // namespace confikd
