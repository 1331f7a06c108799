#pragma once

#include <cstddef>
#include <vector>

#include "upliftkit/errors.hpp"

namespace upliftkit {

/// Dense row-major matrix of doubles. Minimal on purpose: the toolkit's data
/// planes (CATE estimates, potential outcomes, sales predictions) are plain
/// rectangular tables.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
  const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

  std::vector<double> row(std::size_t i) const {
    return std::vector<double>(row_ptr(i), row_ptr(i) + cols_);
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool operator==(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace upliftkit
