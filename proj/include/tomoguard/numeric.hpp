#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "tomoguard/errors.hpp"

namespace tomoguard::numeric {

inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// log(sum(exp(v))) without overflow.
inline double log_sum_exp(const std::vector<double>& v) {
    if (v.empty()) throw DimensionMismatch("log_sum_exp: empty input");
    double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (n-1 denominator); 0 for fewer than two values.
inline double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

inline double std_error(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    return sample_std(v) / std::sqrt(static_cast<double>(v.size()));
}

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

// Wilson score interval for a binomial proportion.
inline Interval wilson_interval(std::size_t successes, std::size_t trials, double z = 1.96) {
    if (trials == 0) return {0.0, 1.0};
    double n = static_cast<double>(trials);
    double p = static_cast<double>(successes) / n;
    double z2 = z * z;
    double denom = 1.0 + z2 / n;
    double center = (p + z2 / (2.0 * n)) / denom;
    double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

// Dense column-major matrix just large enough for the routing systems here
// (k rows up to a few hundred, m columns up to a couple dozen).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // column-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[c * rows + r]; }
    double at(std::size_t r, std::size_t c) const { return data[c * rows + r]; }
};

struct NnlsResult {
    std::vector<double> x;       // nonnegative solution
    double loss = 0.0;           // squared residual ||Ax - b||^2
    std::size_t iterations = 0;  // projected-gradient steps taken
};

// Nonnegative least squares min_{x>=0} ||Ax-b||^2 by projected gradient with
// a fixed step 1/L, L = largest eigenvalue of A^T A bounded by its row-sum
// norm. The systems solved here are tiny and well within the iteration cap.
inline NnlsResult nnls(const Matrix& a, const std::vector<double>& b,
                       std::size_t max_iters = 200, double tol = 1e-8) {
    if (b.size() != a.rows) throw DimensionMismatch("nnls: rhs size does not match rows");
    const std::size_t m = a.cols;
    const std::size_t k = a.rows;

    // Precompute A^T A and A^T b.
    std::vector<double> ata(m * m, 0.0);
    std::vector<double> atb(m, 0.0);
    for (std::size_t c = 0; c < m; ++c) {
        const double* col_c = &a.data[c * k];
        for (std::size_t d = c; d < m; ++d) {
            const double* col_d = &a.data[d * k];
            double s = 0.0;
            for (std::size_t r = 0; r < k; ++r) s += col_c[r] * col_d[r];
            ata[c * m + d] = s;
            ata[d * m + c] = s;
        }
        double s = 0.0;
        for (std::size_t r = 0; r < k; ++r) s += col_c[r] * b[r];
        atb[c] = s;
    }

    double lip = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
        double row = 0.0;
        for (std::size_t d = 0; d < m; ++d) row += std::abs(ata[c * m + d]);
        lip = std::max(lip, row);
    }
    if (lip <= 0.0) {
        // All-zero matrix; solution is x = 0.
        double loss = 0.0;
        for (double v : b) loss += v * v;
        return {std::vector<double>(m, 0.0), loss, 0};
    }
    const double step = 1.0 / lip;

    std::vector<double> x(m, 0.0);
    std::vector<double> grad(m, 0.0);
    std::size_t it = 0;
    for (; it < max_iters; ++it) {
        // grad = A^T A x - A^T b
        double max_move = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            double g = -atb[c];
            for (std::size_t d = 0; d < m; ++d) g += ata[c * m + d] * x[d];
            grad[c] = g;
        }
        for (std::size_t c = 0; c < m; ++c) {
            double nx = std::max(0.0, x[c] - step * grad[c]);
            max_move = std::max(max_move, std::abs(nx - x[c]));
            x[c] = nx;
        }
        if (max_move < tol) {
            ++it;
            break;
        }
    }

    double loss = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
        double ax = 0.0;
        for (std::size_t c = 0; c < m; ++c) ax += a.data[c * k + r] * x[c];
        double res = ax - b[r];
        loss += res * res;
    }
    if (!std::isfinite(loss)) throw NonFiniteValue("nnls: non-finite residual");
    return {std::move(x), loss, it};
}

// Precomputed normal equations for repeated NNLS fits against one matrix.
class NnlsSolver {
public:
    explicit NnlsSolver(const Matrix& a) : a_(a), ata_(a.cols * a.cols, 0.0) {
        const std::size_t m = a.cols;
        const std::size_t k = a.rows;
        for (std::size_t c = 0; c < m; ++c) {
            const double* col_c = &a_.data[c * k];
            for (std::size_t d = c; d < m; ++d) {
                const double* col_d = &a_.data[d * k];
                double s = 0.0;
                for (std::size_t r = 0; r < k; ++r) s += col_c[r] * col_d[r];
                ata_[c * m + d] = s;
                ata_[d * m + c] = s;
            }
        }
        double lip = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            double row = 0.0;
            for (std::size_t d = 0; d < m; ++d) row += std::abs(ata_[c * m + d]);
            lip = std::max(lip, row);
        }
        step_ = lip > 0.0 ? 1.0 / lip : 0.0;
    }

    NnlsResult solve(const std::vector<double>& b, std::size_t max_iters = 200,
                     double tol = 1e-8) const {
        const std::size_t m = a_.cols;
        const std::size_t k = a_.rows;
        if (b.size() != k) throw DimensionMismatch("nnls: rhs size does not match rows");
        std::vector<double> atb(m, 0.0);
        for (std::size_t c = 0; c < m; ++c) {
            const double* col = &a_.data[c * k];
            double s = 0.0;
            for (std::size_t r = 0; r < k; ++r) s += col[r] * b[r];
            atb[c] = s;
        }
        std::vector<double> x(m, 0.0);
        std::size_t it = 0;
        if (step_ > 0.0) {
            std::vector<double> grad(m, 0.0);
            for (; it < max_iters; ++it) {
                double max_move = 0.0;
                for (std::size_t c = 0; c < m; ++c) {
                    double g = -atb[c];
                    for (std::size_t d = 0; d < m; ++d) g += ata_[c * m + d] * x[d];
                    grad[c] = g;
                }
                for (std::size_t c = 0; c < m; ++c) {
                    double nx = std::max(0.0, x[c] - step_ * grad[c]);
                    max_move = std::max(max_move, std::abs(nx - x[c]));
                    x[c] = nx;
                }
                if (max_move < tol) {
                    ++it;
                    break;
                }
            }
        }
        double loss = 0.0;
        for (std::size_t r = 0; r < k; ++r) {
            double ax = 0.0;
            for (std::size_t c = 0; c < m; ++c) ax += a_.data[c * k + r] * x[c];
            double res = ax - b[r];
            loss += res * res;
        }
        if (!std::isfinite(loss)) throw NonFiniteValue("nnls: non-finite residual");
        return {std::move(x), loss, it};
    }

private:
    Matrix a_;
    std::vector<double> ata_;
    double step_ = 0.0;
};

}  // namespace tomoguard::numeric
