#include "techembed/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "techembed/error.hpp"

namespace techembed {

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

namespace {

void require(bool ok, const char* op, const Matrix& a, const Matrix& b) {
    if (!ok) {
        throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() +
                             " and " + b.shape_string());
    }
}

}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
    out = Matrix(a.rows(), b.cols());
    matmul_acc(a, b, out);
}

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    require(a.cols() == b.rows() && out.rows() == a.rows() && out.cols() == b.cols(), "matmul", a, b);
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        double* orow = po + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            const double* brow = pb + p * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    require(a.cols() == b.cols() && out.rows() == a.rows() && out.cols() == b.rows(), "matmul_nt", a, b);
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a.data() + i * k;
        double* orow = out.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = b.data() + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            orow[j] += s;
        }
    }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    require(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols(), "matmul_tn", a, b);
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t r = 0; r < n; ++r) {
        const double* arow = a.data() + r * k;
        const double* brow = b.data() + r * m;
        for (std::size_t i = 0; i < k; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* orow = out.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
}

void add_inplace(Matrix& dst, const Matrix& src) {
    require(dst.same_shape(src), "add", dst, src);
    double* d = dst.data();
    const double* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("dot: length " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

Matrix sinusoidal_positions(std::size_t positions, std::size_t dim) {
    Matrix pe(positions, dim);
    for (std::size_t pos = 0; pos < positions; ++pos) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double exponent = static_cast<double>(i - i % 2) / static_cast<double>(dim);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
            pe(pos, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

}  // namespace techembed
