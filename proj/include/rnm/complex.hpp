#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "rnm/errors.hpp"
#include "rnm/tape.hpp"

namespace rnm {

// Complex scalar as an explicit (re, im) pair. T is double for plain
// numerics or Var for tape-recorded numerics; the arithmetic below is the
// same template either way, which keeps the two paths in lockstep.
template <class T>
struct Cx {
    T re{};
    T im{};
};

using CVar = Cx<Var>;

template <class T>
Cx<T> operator+(const Cx<T>& x, const Cx<T>& y) {
    return {x.re + y.re, x.im + y.im};
}

template <class T>
Cx<T> operator-(const Cx<T>& x, const Cx<T>& y) {
    return {x.re - y.re, x.im - y.im};
}

template <class T>
Cx<T> operator*(const Cx<T>& x, const Cx<T>& y) {
    return {x.re * y.re - x.im * y.im, x.re * y.im + x.im * y.re};
}

template <class T>
Cx<T> operator*(const Cx<T>& x, const T& s) {
    return {x.re * s, x.im * s};
}

template <class T>
Cx<T> operator*(const T& s, const Cx<T>& x) {
    return {s * x.re, s * x.im};
}

template <class T>
Cx<T> operator-(const Cx<T>& x) {
    return {-x.re, -x.im};
}

template <class T>
Cx<T> conj(const Cx<T>& x) {
    return {x.re, -x.im};
}

// |x|^2 as a real scalar.
template <class T>
T norm_sq(const Cx<T>& x) {
    return x.re * x.re + x.im * x.im;
}

template <class T>
Cx<T> operator/(const Cx<T>& x, const T& s) {
    return {x.re / s, x.im / s};
}

template <class T>
Cx<T> operator/(const Cx<T>& x, const Cx<T>& y) {
    const T d = norm_sq(y);
    const Cx<T> n = x * conj(y);
    return {n.re / d, n.im / d};
}

inline CVar lift(Tape& tape, std::complex<double> z) {
    return {tape.constant(z.real()), tape.constant(z.imag())};
}

inline std::complex<double> value(const CVar& z) {
    return {z.re.value(), z.im.value()};
}

// Solves A x = b_j simultaneously for several right-hand sides by Gaussian
// elimination with partial pivoting, recording every scalar operation, so
// solutions are differentiable to any order. Pivot rows are chosen by
// current value magnitude; a pivot below 1e-12 in magnitude raises
// SingularMatrix.
inline std::vector<std::vector<CVar>> solve_on_tape_multi(std::vector<std::vector<CVar>> A,
                                                          std::vector<std::vector<CVar>> rhs) {
    const std::size_t n = A.size();
    for (const auto& row : A) {
        if (row.size() != n) throw DimensionMismatch("solve_on_tape: matrix is not square");
    }
    for (const auto& b : rhs) {
        if (b.size() != n) throw DimensionMismatch("solve_on_tape: rhs length mismatch");
    }

    constexpr double kMinPivot = 1e-12;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t pivot = c;
        double best = std::norm(value(A[c][c]));
        for (std::size_t r = c + 1; r < n; ++r) {
            const double m = std::norm(value(A[r][c]));
            if (m > best) {
                best = m;
                pivot = r;
            }
        }
        if (best < kMinPivot * kMinPivot) {
            throw SingularMatrix("solve_on_tape: pivot magnitude below 1e-12");
        }
        if (pivot != c) {
            std::swap(A[pivot], A[c]);
            for (auto& b : rhs) std::swap(b[pivot], b[c]);
        }
        for (std::size_t r = c + 1; r < n; ++r) {
            const CVar f = A[r][c] / A[c][c];
            for (std::size_t k = c + 1; k < n; ++k) {
                A[r][k] = A[r][k] - f * A[c][k];
            }
            for (auto& b : rhs) b[r] = b[r] - f * b[c];
        }
    }

    std::vector<std::vector<CVar>> xs(rhs.size());
    for (std::size_t j = 0; j < rhs.size(); ++j) {
        auto& x = xs[j];
        x.resize(n);
        for (std::size_t r = n; r-- > 0;) {
            CVar acc = rhs[j][r];
            for (std::size_t k = r + 1; k < n; ++k) {
                acc = acc - A[r][k] * x[k];
            }
            x[r] = acc / A[r][r];
        }
    }
    return xs;
}

inline std::vector<CVar> solve_on_tape(std::vector<std::vector<CVar>> A, std::vector<CVar> b) {
    return solve_on_tape_multi(std::move(A), {std::move(b)})[0];
}

}  // namespace rnm
