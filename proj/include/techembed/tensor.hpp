#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace techembed {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    [[nodiscard]] std::size_t rows() const { return rows_; }
    [[nodiscard]] std::size_t cols() const { return cols_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }

    double* data() { return data_.data(); }
    [[nodiscard]] const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    [[nodiscard]] const std::vector<double>& values() const { return data_; }

    void fill(double v);
    [[nodiscard]] bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    [[nodiscard]] std::string shape_string() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// out = a * b
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
/// out += a * b^T
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);
/// out += a^T * b
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);
/// out += a * b
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out);

/// dst += src (same shape)
void add_inplace(Matrix& dst, const Matrix& src);

double dot(std::span<const double> a, std::span<const double> b);

/// Sinusoidal position table, rows = positions.
Matrix sinusoidal_positions(std::size_t positions, std::size_t dim);

}  // namespace techembed
