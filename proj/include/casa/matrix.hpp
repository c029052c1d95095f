#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace casa {

// Dense row-major matrix of doubles. Working precision for the whole
// pipeline is f64 regardless of the checkpoint dtype.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) noexcept {
        return data_[i * cols_ + j];
    }
    double operator()(std::size_t i, std::size_t j) const noexcept {
        return data_[i * cols_ + j];
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool all_finite() const noexcept;

    Matrix transposed() const;

    double frobenius_norm() const;
    double max_abs() const;
    double col_norm(std::size_t j) const;
    double row_norm(std::size_t i) const;

    friend bool operator==(const Matrix& a, const Matrix& b) noexcept {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

} // namespace casa
