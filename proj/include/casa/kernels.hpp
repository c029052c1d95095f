#pragma once

#include "casa/matrix.hpp"

namespace casa::kernels {

// Dense product kernels used by the routing projections. The parallel
// versions split work across output rows only; every output element is
// accumulated by exactly one thread in the same index order as the serial
// reference, so results are bitwise identical for any thread count.

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
// C = A * B^T
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

// C = alpha * A + beta * B (elementwise)
Matrix axpby(double alpha, const Matrix& a, double beta, const Matrix& b);

Matrix scale(const Matrix& a, double factor);

// Serial reference implementations, kept for testing and benchmarking.
namespace serial {
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);
Matrix axpby(double alpha, const Matrix& a, double beta, const Matrix& b);
} // namespace serial

} // namespace casa::kernels
