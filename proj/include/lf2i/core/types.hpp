#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lf2i {

/// A point in parameter space. Thin value wrapper so parameters and
/// observations cannot be swapped silently at call sites.
struct ParamPoint {
  std::vector<double> values;

  ParamPoint() = default;
  explicit ParamPoint(std::vector<double> v) : values(std::move(v)) {}
  ParamPoint(std::initializer_list<double> v) : values(v) {}

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  std::span<const double> span() const noexcept { return values; }
  auto begin() const noexcept { return values.begin(); }
  auto end() const noexcept { return values.end(); }

  friend bool operator==(const ParamPoint&, const ParamPoint&) = default;
};

/// Select a subset of coordinates.
inline ParamPoint project(const ParamPoint& theta,
                          std::span<const std::size_t> dims) {
  ParamPoint out;
  out.values.reserve(dims.size());
  for (std::size_t d : dims) out.values.push_back(theta.values.at(d));
  return out;
}

/// Dense row-major matrix used for feature tables and datasets.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }

  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

  void append_row(std::span<const double> r) {
    if (rows_ == 0 && cols_ == 0) cols_ = r.size();
    if (r.size() != cols_) throw std::invalid_argument("Matrix::append_row: width mismatch");
    data_.insert(data_.end(), r.begin(), r.end());
    ++rows_;
  }

  void reserve_rows(std::size_t n) { data_.reserve(n * cols_); }
  std::span<const double> data() const noexcept { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// n i.i.d. observations from one simulator call; one row per observation.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(Matrix obs) : obs_(std::move(obs)) { validate(); }
  Dataset(std::size_t n, std::size_t dim) : obs_(n, dim) {}

  std::size_t size() const noexcept { return obs_.rows(); }
  std::size_t dim() const noexcept { return obs_.cols(); }
  bool empty() const noexcept { return obs_.rows() == 0; }
  std::span<const double> row(std::size_t i) const { return obs_.row(i); }
  std::span<double> row(std::size_t i) { return obs_.row(i); }
  const Matrix& matrix() const noexcept { return obs_; }

  std::vector<double> mean() const {
    std::vector<double> m(dim(), 0.0);
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < dim(); ++j) m[j] += obs_(i, j);
    for (double& v : m) v /= static_cast<double>(size());
    return m;
  }

  void validate() const {
    if (obs_.rows() == 0) throw std::invalid_argument("Dataset: needs at least one observation");
    for (double v : obs_.data())
      if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite observation");
  }

 private:
  Matrix obs_;
};

/// Concatenate (theta, x) into the classifier feature layout.
inline void joint_features(std::span<const double> theta, std::span<const double> x,
                           std::vector<double>& out) {
  out.resize(theta.size() + x.size());
  std::copy(theta.begin(), theta.end(), out.begin());
  std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(theta.size()));
}

}  // namespace lf2i
