#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "rdcd/error.hpp"

namespace rdcd {

using Vec = std::vector<double>;

// Dense row-major matrix of 64-bit reals.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  void set_row(std::size_t i, std::span<const double> v) {
    std::copy(v.begin(), v.end(), data.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Mat from_rows(const std::vector<Vec>& rs) {
    if (rs.empty()) return {};
    Mat m(rs.size(), rs.front().size());
    for (std::size_t i = 0; i < rs.size(); ++i) {
      require(rs[i].size() == m.cols, Errc::dim_mismatch, "from_rows: ragged rows");
      m.set_row(i, rs[i]);
    }
    return m;
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}

inline bool all_finite(const Mat& m) { return all_finite(std::span<const double>(m.data)); }

// Unit-scaling of a vector; direction preserved.
inline Vec l2_normalize(const Vec& v) {
  double n = norm(v);
  require(n >= 1e-12, Errc::zero_vector, "l2_normalize: vector norm below 1e-12");
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

inline void l2_normalize_rows(Mat& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto r = m.row(i);
    double n = norm(r);
    require(n >= 1e-12, Errc::zero_vector, "l2_normalize_rows: zero row");
    for (double& x : r) x /= n;
  }
}

inline bool rows_unit_norm(const Mat& m, double tol = 1e-9) {
  for (std::size_t i = 0; i < m.rows; ++i)
    if (std::abs(norm(m.row(i)) - 1.0) > tol) return false;
  return true;
}

// Pairwise dot products of unit rows: out(i,j) = A_i . B_j.
inline Mat cosine_sim_matrix(const Mat& A, const Mat& B) {
  require(A.cols == B.cols, Errc::dim_mismatch, "cosine_sim_matrix: column mismatch");
  require(rows_unit_norm(A) && rows_unit_norm(B), Errc::not_normalized,
          "cosine_sim_matrix: rows must be unit-normalized within 1e-9");
  Mat out(A.rows, B.rows);
  for (std::size_t i = 0; i < A.rows; ++i) {
    auto a = A.row(i);
    for (std::size_t j = 0; j < B.rows; ++j) out(i, j) = dot(a, B.row(j));
  }
  return out;
}

// Max-subtracted softmax of logits/temperature.
inline Vec softmax(const Vec& logits, double temperature) {
  require(temperature > 0.0, Errc::non_positive_temperature, "softmax: temperature must be > 0");
  Vec out(logits.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : logits) hi = std::max(hi, x / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - hi);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

inline Mat transpose(const Mat& m) {
  Mat out(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  require(a.cols == b.rows, Errc::dim_mismatch, "matmul: inner dimension mismatch");
  Mat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

// y = M x
inline Vec matvec(const Mat& m, std::span<const double> x) {
  require(m.cols == x.size(), Errc::dim_mismatch, "matvec: dimension mismatch");
  Vec y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) y[i] = dot(m.row(i), x);
  return y;
}

// y = M^T x
inline Vec matvec_t(const Mat& m, std::span<const double> x) {
  require(m.rows == x.size(), Errc::dim_mismatch, "matvec_t: dimension mismatch");
  Vec y(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double xi = x[i];
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols; ++j) y[j] += r[j] * xi;
  }
  return y;
}

struct EigResult {
  Vec values;   // descending
  Mat vectors;  // column k is the eigenvector of values[k]; M = V diag(values) V^T
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Sweeps rotate every
// off-diagonal pair until the off-diagonal Frobenius norm drops below 1e-12
// relative to the matrix scale.
inline EigResult sym_eig(const Mat& M) {
  require(M.rows == M.cols, Errc::dim_mismatch, "sym_eig: matrix not square");
  const std::size_t n = M.rows;
  double scale = 0.0;
  for (double x : M.data) scale = std::max(scale, std::abs(x));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      require(std::abs(M(i, j) - M(j, i)) <= 1e-9 * std::max(1.0, scale), Errc::not_symmetric,
              "sym_eig: matrix not symmetric within 1e-9");

  Mat A = M;
  // Symmetrize exactly so rotations keep A symmetric to the last bit.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = 0.5 * (A(i, j) + A(j, i));
      A(i, j) = A(j, i) = v;
    }
  Mat V = Mat::identity(n);

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += A(i, j) * A(i, j);
    return std::sqrt(2.0 * s);
  };

  double frob = 0.0;
  for (double x : A.data) frob += x * x;
  frob = std::sqrt(frob);
  const double tol = 1e-12 * std::max(1.0, frob);

  for (int sweep = 0; sweep < 100 && off_norm() > tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = A(p, q);
        if (apq == 0.0) continue;
        double app = A(p, p), aqq = A(q, q);
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = t * c;

        A(p, p) = app - t * apq;
        A(q, q) = aqq + t * apq;
        A(p, q) = A(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r != p && r != q) {
            double arp = A(r, p), arq = A(r, q);
            A(r, p) = A(p, r) = c * arp - s * arq;
            A(r, q) = A(q, r) = s * arp + c * arq;
          }
          double vrp = V(r, p), vrq = V(r, q);
          V(r, p) = c * vrp - s * vrq;
          V(r, q) = s * vrp + c * vrq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return A(a, a) > A(b, b); });

  EigResult res;
  res.values.resize(n);
  res.vectors = Mat(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    res.values[k] = A(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) res.vectors(r, k) = V(r, order[k]);
  }
  return res;
}

}  // namespace rdcd
