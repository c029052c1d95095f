#include "casa/spectral.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "casa/errors.hpp"
#include "casa/kernels.hpp"

namespace casa {

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(
        m.data(), static_cast<Eigen::Index>(m.rows()),
        static_cast<Eigen::Index>(m.cols()));
}

Matrix from_eigen(const Eigen::MatrixXd& e) {
    Matrix m(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
    for (Eigen::Index i = 0; i < e.rows(); ++i)
        for (Eigen::Index j = 0; j < e.cols(); ++j)
            m(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = e(i, j);
    return m;
}

double norm2(const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x * x;
    return std::sqrt(sum);
}

} // namespace

SvdTriple svd(const Matrix& w) {
    if (w.rows() == 0 || w.cols() == 0)
        throw ShapeError("svd: matrix has a zero dimension");
    if (!w.all_finite()) throw DataError("svd: matrix contains NaN or Inf");

    Eigen::BDCSVD<Eigen::MatrixXd> solver(to_eigen(w),
                                          Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (solver.info() != Eigen::Success)
        throw NumericalError("svd: decomposition did not converge");

    SvdTriple out;
    out.u = from_eigen(solver.matrixU());
    out.v = from_eigen(solver.matrixV());
    out.s.assign(solver.singularValues().data(),
                 solver.singularValues().data() + solver.singularValues().size());

    // Sign convention: largest-magnitude element of each U column positive,
    // first occurrence breaking ties.
    for (std::size_t j = 0; j < out.m(); ++j) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < out.u.rows(); ++i) {
            const double a = std::abs(out.u(i, j));
            if (a > best) {
                best = a;
                arg = i;
            }
        }
        if (out.u(arg, j) < 0.0) {
            for (std::size_t i = 0; i < out.u.rows(); ++i) out.u(i, j) = -out.u(i, j);
            for (std::size_t i = 0; i < out.v.rows(); ++i) out.v(i, j) = -out.v(i, j);
        }
    }
    return out;
}

double spectral_rigidity(const std::vector<double>& s,
                         const std::vector<double>& s_prime) {
    if (s.size() != s_prime.size())
        throw ShapeError("spectral_rigidity: spectra have different lengths");
    const double denom = norm2(s);
    if (denom == 0.0)
        throw DegenerateError("spectral_rigidity: reference spectrum is all zero");
    double sum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double d = s_prime[i] - s[i];
        sum += d * d;
    }
    return std::sqrt(sum) / denom;
}

SimilarityMatrix subspace_similarity(const Matrix& u, const Matrix& u_prime,
                                     std::string row_basis, std::string col_basis) {
    if (u.rows() != u_prime.rows())
        throw ShapeError("subspace_similarity: bases have different ambient dimension");
    SimilarityMatrix sim;
    sim.values = kernels::matmul_at_b(u, u_prime);
    for (std::size_t i = 0; i < sim.values.size(); ++i)
        sim.values.data()[i] = std::abs(sim.values.data()[i]);
    sim.row_basis = std::move(row_basis);
    sim.col_basis = std::move(col_basis);
    return sim;
}

std::size_t topk_energy(const std::vector<double>& s, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw UsageError("topk_energy: fraction must lie in (0, 1]");
    if (s.empty()) throw DegenerateError("topk_energy: empty spectrum");
    double total = 0.0;
    for (double v : s) total += v * v;
    if (total == 0.0) throw DegenerateError("topk_energy: all-zero spectrum");
    const double threshold = fraction * total;
    double cum = 0.0;
    for (std::size_t k = 1; k <= s.size(); ++k) {
        cum += s[k - 1] * s[k - 1];
        if (cum >= threshold) return k;
    }
    return s.size(); // fraction*total can exceed cum only through roundoff
}

std::pair<Matrix, Matrix> truncated_factorize(const Matrix& delta, std::size_t r) {
    if (r == 0) throw UsageError("truncated_factorize: rank must be positive");
    const SvdTriple t = svd(delta);
    const std::size_t keep = std::min(r, t.m());
    Matrix b(delta.rows(), r);
    Matrix a(r, delta.cols());
    for (std::size_t j = 0; j < keep; ++j) {
        const double root = std::sqrt(t.s[j]);
        for (std::size_t i = 0; i < delta.rows(); ++i) b(i, j) = t.u(i, j) * root;
        for (std::size_t i = 0; i < delta.cols(); ++i) a(j, i) = t.v(i, j) * root;
    }
    return {std::move(b), std::move(a)};
}

} // namespace casa
