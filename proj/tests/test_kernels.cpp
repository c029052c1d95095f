#include <doctest.h>

#include "casa/errors.hpp"
#include "casa/kernels.hpp"
#include "support/fixture.hpp"

using namespace casa;
using testsupport::random_matrix;

TEST_CASE("matmul basics") {
    const Matrix a{{1.0, 2.0}, {3.0, 4.0}};
    const Matrix b{{5.0, 6.0}, {7.0, 8.0}};
    const Matrix c = kernels::matmul(a, b);
    CHECK(c(0, 0) == 19.0);
    CHECK(c(0, 1) == 22.0);
    CHECK(c(1, 0) == 43.0);
    CHECK(c(1, 1) == 50.0);

    const Matrix id = Matrix::identity(2);
    CHECK(kernels::matmul(a, id) == a);
    CHECK(kernels::matmul(id, a) == a);
}

TEST_CASE("transposed products agree with explicit transposition") {
    testsupport::Rng rng(7);
    const Matrix a = random_matrix(rng, 13, 9);
    const Matrix b = random_matrix(rng, 13, 5);
    const Matrix c = random_matrix(rng, 4, 9);

    CHECK(kernels::matmul_at_b(a, b) == kernels::matmul(a.transposed(), b));
    CHECK(kernels::matmul_a_bt(a, c) == kernels::matmul(a, c.transposed()));
}

TEST_CASE("parallel kernels match the serial reference bitwise") {
    testsupport::Rng rng(11);
    // Large enough that the parallel paths actually fork.
    const Matrix a = random_matrix(rng, 160, 120);
    const Matrix b = random_matrix(rng, 120, 140);
    const Matrix c = random_matrix(rng, 160, 120);

    CHECK(kernels::matmul(a, b) == kernels::serial::matmul(a, b));
    CHECK(kernels::matmul_at_b(a, c) == kernels::serial::matmul_at_b(a, c));
    CHECK(kernels::matmul_a_bt(a, c) == kernels::serial::matmul_a_bt(a, c));
    CHECK(kernels::axpby(1.5, a, -0.25, c) == kernels::serial::axpby(1.5, a, -0.25, c));
}

TEST_CASE("shape mismatches are rejected") {
    const Matrix a(3, 4);
    const Matrix b(3, 4);
    CHECK_THROWS_AS(kernels::matmul(a, b), ShapeError);
    CHECK_THROWS_AS(kernels::axpby(1.0, a, 1.0, Matrix(4, 3)), ShapeError);
}

TEST_CASE("axpby computes alpha*A + beta*B") {
    const Matrix a{{1.0, 2.0}, {3.0, 4.0}};
    const Matrix b{{10.0, 20.0}, {30.0, 40.0}};
    const Matrix c = kernels::axpby(2.0, a, -0.5, b);
    CHECK(c(0, 0) == -3.0);
    CHECK(c(1, 1) == -12.0);
}
