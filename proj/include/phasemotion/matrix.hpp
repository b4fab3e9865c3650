#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace phasemotion {

/// Read-only window onto a row-major block: `rows` rows of `cols` values,
/// consecutive rows `stride` doubles apart. Used to hand sub-windows of a
/// clip to the network without copying.
struct ConstMatrixView {
    const double* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t stride = 0;

    double operator()(std::size_t r, std::size_t c) const { return data[r * stride + c]; }
    std::span<const double> row(std::size_t r) const { return {data + r * stride, cols}; }

    ConstMatrixView columns(std::size_t first, std::size_t count) const {
        assert(first + count <= cols);
        return {data + first, rows, count, stride};
    }
};

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

    ConstMatrixView view() const { return {data_.data(), rows_, cols_, cols_}; }
    ConstMatrixView columns(std::size_t first, std::size_t count) const {
        return view().columns(first, count);
    }

    static Matrix from_view(const ConstMatrixView& v) {
        Matrix m(v.rows, v.cols);
        for (std::size_t r = 0; r < v.rows; ++r)
            for (std::size_t c = 0; c < v.cols; ++c) m(r, c) = v(r, c);
        return m;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

}  // namespace phasemotion
