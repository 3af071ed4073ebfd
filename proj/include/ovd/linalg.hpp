#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ovd/errors.hpp"

namespace ovd {

// Dense helpers for the small symmetric systems the benchmark generator
// solves. Everything is row-major and sized for n in the tens.

// In-place Cholesky factorization A = L L^T; returns the lower factor packed
// into the same row-major storage (upper part is zeroed). Throws if A is not
// positive definite within a small tolerance.
inline std::vector<double> cholesky_factor(std::vector<double> a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) sum -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (sum <= 1e-12) throw InvalidSpecError("cholesky: matrix is not positive definite");
                a[i * n + j] = std::sqrt(sum);
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
        for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = 0.0;
    }
    return a;
}

// Solves L L^T x = b given the packed lower factor.
inline std::vector<double> cholesky_solve(const std::vector<double>& l, std::size_t n,
                                          const std::vector<double>& b) {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = b[i];
        for (std::size_t k = 0; k < i; ++k) sum -= l[i * n + k] * y[k];
        y[i] = sum / l[i * n + i];
    }
    std::vector<double> x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double sum = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) sum -= l[k * n + ii] * x[k];
        x[ii] = sum / l[ii * n + ii];
    }
    return x;
}

}  // namespace ovd
