#pragma once

// Dense row-major matrix of doubles. Heavy kernels (GEMM) are delegated to
// Eigen through zero-copy maps; everything else is plain loops.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "iosda/errors.hpp"

namespace iosda {

class RealMatrix {
 public:
  RealMatrix() = default;
  RealMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  RealMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionError("RealMatrix: data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  static RealMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    RealMatrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != m.cols_) throw DimensionError("RealMatrix::from_rows: ragged rows");
      std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
  }

  static RealMatrix identity(std::size_t n) {
    RealMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  [[nodiscard]] std::span<double> row(std::size_t r) noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  [[nodiscard]] std::vector<double>& data() noexcept { return data_; }
  [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }

  [[nodiscard]] bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

  RealMatrix& operator+=(const RealMatrix& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  RealMatrix& operator-=(const RealMatrix& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  RealMatrix& operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const RealMatrix&, const RealMatrix&) = default;

  void require_same_shape(const RealMatrix& o, const char* what) const {
    if (rows_ != o.rows_ || cols_ != o.cols_)
      throw DimensionError(std::string("RealMatrix ") + what + ": shape " + shape_str() +
                           " vs " + o.shape_str());
  }

  [[nodiscard]] std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline RealMatrix operator+(RealMatrix a, const RealMatrix& b) { return a += b; }
inline RealMatrix operator-(RealMatrix a, const RealMatrix& b) { return a -= b; }
inline RealMatrix operator*(RealMatrix a, double s) { return a *= s; }

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

inline ConstMap view(const RealMatrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
inline MutMap view(RealMatrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

}  // namespace detail

/// a · b
inline RealMatrix matmul(const RealMatrix& a, const RealMatrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + a.shape_str() + " * " + b.shape_str());
  RealMatrix out(a.rows(), b.cols());
  if (a.rows() && b.cols() && a.cols()) detail::view(out).noalias() = detail::view(a) * detail::view(b);
  return out;
}

/// aᵀ · b
inline RealMatrix matmul_tn(const RealMatrix& a, const RealMatrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: " + a.shape_str() + "^T * " + b.shape_str());
  RealMatrix out(a.cols(), b.cols());
  if (a.cols() && b.cols() && a.rows())
    detail::view(out).noalias() = detail::view(a).transpose() * detail::view(b);
  return out;
}

/// a · bᵀ
inline RealMatrix matmul_nt(const RealMatrix& a, const RealMatrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: " + a.shape_str() + " * " + b.shape_str() + "^T");
  RealMatrix out(a.rows(), b.rows());
  if (a.rows() && b.rows() && a.cols())
    detail::view(out).noalias() = detail::view(a) * detail::view(b).transpose();
  return out;
}

/// Column-wise sum, returned as a 1×cols matrix.
inline RealMatrix column_sums(const RealMatrix& m) {
  RealMatrix out(1, m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(0, c) += m(r, c);
  return out;
}

/// Rows [begin, end) as a new matrix.
inline RealMatrix slice_rows(const RealMatrix& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.rows()) throw DimensionError("slice_rows: range out of bounds");
  RealMatrix out(end - begin, m.cols());
  std::copy(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()),
            m.data().begin() + static_cast<std::ptrdiff_t>(end * m.cols()), out.data().begin());
  return out;
}

/// Columns [begin, end) as a new matrix.
inline RealMatrix slice_cols(const RealMatrix& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.cols()) throw DimensionError("slice_cols: range out of bounds");
  RealMatrix out(m.rows(), end - begin);
  for (std::size_t r = 0; r < m.rows(); ++r)
    std::copy(m.row(r).begin() + static_cast<std::ptrdiff_t>(begin),
              m.row(r).begin() + static_cast<std::ptrdiff_t>(end), out.row(r).begin());
  return out;
}

/// Rows selected by index, in the given order.
inline RealMatrix gather_rows(const RealMatrix& m, std::span<const std::size_t> idx) {
  RealMatrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m.rows()) throw DimensionError("gather_rows: index out of range");
    std::copy(m.row(idx[i]).begin(), m.row(idx[i]).end(), out.row(i).begin());
  }
  return out;
}

inline RealMatrix vstack(const RealMatrix& top, const RealMatrix& bottom) {
  if (top.empty()) return bottom;
  if (bottom.empty()) return top;
  if (top.cols() != bottom.cols()) throw DimensionError("vstack: column mismatch");
  RealMatrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.data().begin(), top.data().end(), out.data().begin());
  std::copy(bottom.data().begin(), bottom.data().end(),
            out.data().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

inline RealMatrix hstack(const RealMatrix& left, const RealMatrix& right) {
  if (left.rows() != right.rows()) throw DimensionError("hstack: row mismatch");
  RealMatrix out(left.rows(), left.cols() + right.cols());
  for (std::size_t r = 0; r < left.rows(); ++r) {
    auto dst = out.row(r);
    std::copy(left.row(r).begin(), left.row(r).end(), dst.begin());
    std::copy(right.row(r).begin(), right.row(r).end(),
              dst.begin() + static_cast<std::ptrdiff_t>(left.cols()));
  }
  return out;
}

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace iosda
