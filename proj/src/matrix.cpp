#include "casa/matrix.hpp"

#include <cmath>
#include <stdexcept>

namespace casa {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
        if (row.size() != cols_)
            throw std::invalid_argument("ragged initializer for Matrix");
        data_.insert(data_.end(), row.begin(), row.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const noexcept {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

double Matrix::frobenius_norm() const {
    double sum = 0.0;
    for (double v : data_) sum += v * v;
    return std::sqrt(sum);
}

double Matrix::max_abs() const {
    double best = 0.0;
    for (double v : data_) best = std::max(best, std::abs(v));
    return best;
}

double Matrix::col_norm(std::size_t j) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) sum += (*this)(i, j) * (*this)(i, j);
    return std::sqrt(sum);
}

double Matrix::row_norm(std::size_t i) const {
    double sum = 0.0;
    for (std::size_t j = 0; j < cols_; ++j) sum += (*this)(i, j) * (*this)(i, j);
    return std::sqrt(sum);
}

} // namespace casa
