#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include "kinkcert/errors.hpp"

namespace kinkcert {

template <std::size_t N> using Vec = std::array<double, N>;
template <std::size_t N> using Mat = std::array<std::array<double, N>, N>;

using Vec2 = Vec<2>;
using Vec3 = Vec<3>;
using Vec4 = Vec<4>;
using Mat2 = Mat<2>;
using Mat3 = Mat<3>;
using Mat4 = Mat<4>;

template <std::size_t N> constexpr Mat<N> zeros() {
    Mat<N> m{};
    return m;
}

template <std::size_t N> constexpr Mat<N> identity() {
    Mat<N> m{};
    for (std::size_t i = 0; i < N; ++i) m[i][i] = 1.0;
    return m;
}

template <std::size_t N> Mat<N> operator+(const Mat<N>& a, const Mat<N>& b) {
    Mat<N> r;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) r[i][j] = a[i][j] + b[i][j];
    return r;
}

template <std::size_t N> Mat<N> operator-(const Mat<N>& a, const Mat<N>& b) {
    Mat<N> r;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) r[i][j] = a[i][j] - b[i][j];
    return r;
}

template <std::size_t N> Mat<N> operator*(double s, const Mat<N>& a) {
    Mat<N> r;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) r[i][j] = s * a[i][j];
    return r;
}

template <std::size_t N> Mat<N> operator*(const Mat<N>& a, const Mat<N>& b) {
    Mat<N> r{};
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t k = 0; k < N; ++k) {
            double aik = a[i][k];
            for (std::size_t j = 0; j < N; ++j) r[i][j] += aik * b[k][j];
        }
    return r;
}

template <std::size_t N> Vec<N> operator*(const Mat<N>& a, const Vec<N>& x) {
    Vec<N> r{};
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) r[i] += a[i][j] * x[j];
    return r;
}

template <std::size_t N> Vec<N> operator+(const Vec<N>& a, const Vec<N>& b) {
    Vec<N> r;
    for (std::size_t i = 0; i < N; ++i) r[i] = a[i] + b[i];
    return r;
}

template <std::size_t N> Vec<N> operator-(const Vec<N>& a, const Vec<N>& b) {
    Vec<N> r;
    for (std::size_t i = 0; i < N; ++i) r[i] = a[i] - b[i];
    return r;
}

template <std::size_t N> Vec<N> operator*(double s, const Vec<N>& a) {
    Vec<N> r;
    for (std::size_t i = 0; i < N; ++i) r[i] = s * a[i];
    return r;
}

template <std::size_t N> Mat<N> transpose(const Mat<N>& a) {
    Mat<N> r;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) r[i][j] = a[j][i];
    return r;
}

template <std::size_t N> double dot(const Vec<N>& a, const Vec<N>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) s += a[i] * b[i];
    return s;
}

// Induced infinity norm (max absolute row sum).
template <std::size_t N> double inf_norm(const Mat<N>& a) {
    double best = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < N; ++j) row += std::fabs(a[i][j]);
        best = std::max(best, row);
    }
    return best;
}

template <std::size_t N> double inf_norm(const Vec<N>& a) {
    double best = 0.0;
    for (std::size_t i = 0; i < N; ++i) best = std::max(best, std::fabs(a[i]));
    return best;
}

template <std::size_t N> double max_abs(const Mat<N>& a) {
    double best = 0.0;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) best = std::max(best, std::fabs(a[i][j]));
    return best;
}

template <std::size_t N> double max_asymmetry(const Mat<N>& a) {
    double best = 0.0;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = i + 1; j < N; ++j) best = std::max(best, std::fabs(a[i][j] - a[j][i]));
    return best;
}

inline double det(const Mat2& m) { return m[0][0] * m[1][1] - m[0][1] * m[1][0]; }

inline Mat2 inverse(const Mat2& m) {
    double d = det(m);
    if (d == 0.0) throw SingularError("2x2 matrix is singular");
    return Mat2{{{m[1][1] / d, -m[0][1] / d}, {-m[1][0] / d, m[0][0] / d}}};
}

template <std::size_t N> struct EigenSym {
    Vec<N> values;  // descending
    Mat<N> vectors; // columns, vectors[i][k] = component i of eigenvector k
};

// Cyclic Jacobi for symmetric matrices. Dimension is 2..4 here, so the plain
// quadratic sweep converges in a handful of passes.
template <std::size_t N> EigenSym<N> eigen_sym(const Mat<N>& input) {
    Mat<N> a = input;
    Mat<N> v = identity<N>();
    double scale = 0.0;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) scale = std::max(scale, std::fabs(a[i][j]));
    if (scale == 0.0) scale = 1.0;
    const double tol = 1e-14 * scale;

    auto off_diag = [&a]() {
        double off = 0.0;
        for (std::size_t p = 0; p < N; ++p)
            for (std::size_t q = p + 1; q < N; ++q) off = std::max(off, std::fabs(a[p][q]));
        return off;
    };
    for (int sweep = 0; sweep < 100; ++sweep) {
        if (off_diag() <= tol) break;
        for (std::size_t p = 0; p < N; ++p) {
            for (std::size_t q = p + 1; q < N; ++q) {
                if (std::fabs(a[p][q]) <= tol * 1e-3) continue;
                double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < N; ++k) {
                    double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < N; ++k) {
                    double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < N; ++k) {
                    double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }

    if (off_diag() > tol) throw NumericError("jacobi eigensolver failed to converge");

    EigenSym<N> out;
    std::array<std::size_t, N> order{};
    for (std::size_t i = 0; i < N; ++i) order[i] = i;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = i + 1; j < N; ++j)
            if (a[order[j]][order[j]] > a[order[i]][order[i]]) std::swap(order[i], order[j]);
    for (std::size_t k = 0; k < N; ++k) {
        out.values[k] = a[order[k]][order[k]];
        for (std::size_t i = 0; i < N; ++i) out.vectors[i][k] = v[i][order[k]];
    }
    return out;
}

// Symmetric square root of a PSD matrix; tiny negative eigenvalues from
// rounding are clipped at zero.
template <std::size_t N> Mat<N> sym_sqrt(const Mat<N>& m) {
    EigenSym<N> e = eigen_sym(m);
    Mat<N> r{};
    for (std::size_t k = 0; k < N; ++k) {
        double lam = std::max(e.values[k], 0.0);
        double s = std::sqrt(lam);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < N; ++j) r[i][j] += s * e.vectors[i][k] * e.vectors[j][k];
    }
    return r;
}

} // namespace kinkcert
