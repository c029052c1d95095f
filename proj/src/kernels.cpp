#include "casa/kernels.hpp"

#include <cstdint>

#include "casa/errors.hpp"

namespace casa::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::uint64_t kParallelFlopThreshold = 1u << 20;

void require(bool ok, const char* what) {
    if (!ok) throw ShapeError(what);
}

} // namespace

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions disagree");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) sum += a(i, k) * b(k, j);
            c(i, j) = sum;
        }
    return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_at_b: row counts disagree");
    Matrix c(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.cols(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < a.rows(); ++k) sum += a(k, i) * b(k, j);
            c(i, j) = sum;
        }
    return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_a_bt: column counts disagree");
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) sum += a(i, k) * b(j, k);
            c(i, j) = sum;
        }
    return c;
}

Matrix axpby(double alpha, const Matrix& a, double beta, const Matrix& b) {
    require(a.same_shape(b), "axpby: shapes disagree");
    Matrix c(a.rows(), a.cols());
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (std::size_t i = 0; i < a.size(); ++i) pc[i] = alpha * pa[i] + beta * pb[i];
    return c;
}

} // namespace serial

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions disagree");
    Matrix c(a.rows(), b.cols());
    const std::uint64_t flops =
        static_cast<std::uint64_t>(a.rows()) * b.cols() * a.cols();
    const std::int64_t n = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static) if (flops > kParallelFlopThreshold)
    for (std::int64_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) sum += a(i, k) * b(k, j);
            c(i, j) = sum;
        }
    return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_at_b: row counts disagree");
    Matrix c(a.cols(), b.cols());
    const std::uint64_t flops =
        static_cast<std::uint64_t>(a.cols()) * b.cols() * a.rows();
    const std::int64_t n = static_cast<std::int64_t>(a.cols());
#pragma omp parallel for schedule(static) if (flops > kParallelFlopThreshold)
    for (std::int64_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < a.rows(); ++k) sum += a(k, i) * b(k, j);
            c(i, j) = sum;
        }
    return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_a_bt: column counts disagree");
    Matrix c(a.rows(), b.rows());
    const std::uint64_t flops =
        static_cast<std::uint64_t>(a.rows()) * b.rows() * a.cols();
    const std::int64_t n = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static) if (flops > kParallelFlopThreshold)
    for (std::int64_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) sum += a(i, k) * b(j, k);
            c(i, j) = sum;
        }
    return c;
}

Matrix axpby(double alpha, const Matrix& a, double beta, const Matrix& b) {
    require(a.same_shape(b), "axpby: shapes disagree");
    Matrix c(a.rows(), a.cols());
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    const std::int64_t n = static_cast<std::int64_t>(a.size());
#pragma omp parallel for schedule(static) if (n > (1 << 20))
    for (std::int64_t i = 0; i < n; ++i) pc[i] = alpha * pa[i] + beta * pb[i];
    return c;
}

Matrix scale(const Matrix& a, double factor) {
    Matrix c(a.rows(), a.cols());
    const double* pa = a.data();
    double* pc = c.data();
    const std::int64_t n = static_cast<std::int64_t>(a.size());
#pragma omp parallel for schedule(static) if (n > (1 << 20))
    for (std::int64_t i = 0; i < n; ++i) pc[i] = factor * pa[i];
    return c;
}

} // namespace casa::kernels
