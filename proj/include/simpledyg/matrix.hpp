#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace simpledyg {

// Dense row-major matrix of doubles. Row vectors are 1xN matrices.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
  Matrix(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    assert(static_cast<size_t>(rows) * cols == data.size());
  }

  double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  size_t size() const { return data.size(); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

inline void check_shape(bool ok, const std::string& what, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw std::invalid_argument(what + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

// c += a * b. The inner accumulation runs over k in index order for every
// output row independently, so row i of the product is bit-identical whether
// computed alone or as part of a larger matrix.
inline void mm_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
  const int n = b.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double av = ar[k];
      const double* br = b.row(k);
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// c += a * b^T
inline void mm_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
  const int k = a.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* br = b.row(j);
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += ar[t] * br[t];
      cr[j] += acc;
    }
  }
}

// c += a^T * b
inline void mm_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
  const int n = b.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    const double* br = b.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double av = ar[k];
      double* cr = c.row(k);
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

inline Matrix mm(const Matrix& a, const Matrix& b) {
  check_shape(a.cols == b.rows, "mm", a, b);
  Matrix c(a.rows, b.cols);
  mm_acc(a, b, c);
  return c;
}

inline Matrix mm_nt(const Matrix& a, const Matrix& b) {
  check_shape(a.cols == b.cols, "mm_nt", a, b);
  Matrix c(a.rows, b.rows);
  mm_nt_acc(a, b, c);
  return c;
}

inline void add_inplace(Matrix& a, const Matrix& b) {
  assert(a.same_shape(b));
  for (size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

inline void axpy_inplace(Matrix& a, double alpha, const Matrix& b) {
  assert(a.same_shape(b));
  for (size_t i = 0; i < a.size(); ++i) a.data[i] += alpha * b.data[i];
}

inline double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

inline double gelu_grad_scalar(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
  return cdf + x * pdf;
}

}  // namespace simpledyg
