#pragma once

#include <string>
#include <utility>
#include <vector>

#include "casa/matrix.hpp"

namespace casa {

// Thin SVD of a layer weight matrix, W = U * diag(S) * V^T. This is the
// coordinate system all routing math lives in.
struct SvdTriple {
    Matrix u;              // d_out x m, column-orthonormal
    std::vector<double> s; // m singular values, nonincreasing
    Matrix v;              // d_in x m, column-orthonormal

    std::size_t m() const noexcept { return s.size(); }
};

struct SimilarityMatrix {
    Matrix values; // entries in [0, 1]
    std::string row_basis;
    std::string col_basis;
};

// Thin SVD with a deterministic sign convention: the largest-magnitude
// element of each column of U is made positive (V adjusted to match), so
// repeated runs produce identical triples.
SvdTriple svd(const Matrix& w);

// Relative spectral change ||S' - S||_2 / ||S||_2.
double spectral_rigidity(const std::vector<double>& s,
                         const std::vector<double>& s_prime);

// values[i][j] = |U[:,i] . U'[:,j]|
SimilarityMatrix subspace_similarity(const Matrix& u, const Matrix& u_prime,
                                     std::string row_basis = "pre",
                                     std::string col_basis = "post");

// Smallest k whose leading singular values capture `fraction` of the
// total spectral energy (sum of squares).
std::size_t topk_energy(const std::vector<double>& s, double fraction);

// Best rank-r approximation in Frobenius norm, split as
// B = U_r diag(sqrt(S_r)), A = diag(sqrt(S_r)) V_r^T. Requested ranks
// beyond min(rows, cols) are zero-padded so the factor shapes still hold.
std::pair<Matrix, Matrix> truncated_factorize(const Matrix& delta, std::size_t r);

} // namespace casa
