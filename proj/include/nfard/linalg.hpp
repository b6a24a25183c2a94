#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "nfard/error.hpp"
#include "nfard/matrix.hpp"

namespace nfard {

/// Thin SVD: A = U * diag(singular_values) * V^T with k = min(rows, cols)
/// columns in U and V, singular values sorted descending.
struct SvdResult {
  Matrix u;
  std::vector<double> singular_values;
  Matrix v;
};

namespace detail {

// One-sided Jacobi on a tall (rows >= cols) matrix: columns of the working
// copy are rotated toward mutual orthogonality while the same rotations
// accumulate into V.
inline SvdResult svd_tall(const Matrix& a) {
  const std::size_t n = a.rows();
  const std::size_t m = a.cols();
  Matrix w = a;
  Matrix v = Matrix::identity(m);

  constexpr int kMaxSweeps = 64;
  constexpr double kOrthTol = 1e-15;

  bool converged = (m <= 1);
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        double app = column_dot(w, p, w, p);
        double aqq = column_dot(w, q, w, q);
        double apq = column_dot(w, p, w, q);
        if (app == 0.0 || aqq == 0.0) continue;
        if (std::abs(apq) <= kOrthTol * std::sqrt(app * aqq)) continue;
        converged = false;

        double zeta = (aqq - app) / (2.0 * apq);
        double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = c * t;
        for (std::size_t i = 0; i < n; ++i) {
          double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < m; ++i) {
          double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged)
    throw NumericalError("svd: Jacobi sweeps did not converge within " +
                         std::to_string(kMaxSweeps) + " iterations");

  std::vector<double> sigma(m);
  for (std::size_t j = 0; j < m; ++j) sigma[j] = column_norm(w, j);

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

  SvdResult r;
  r.u = Matrix(n, m);
  r.v = Matrix(m, m);
  r.singular_values.resize(m);
  double smax = m ? sigma[order[0]] : 0.0;
  // Columns whose singular value is numerically zero cannot be normalized;
  // they are completed to an orthonormal basis below.
  double floor = smax * static_cast<double>(std::max(n, m)) *
                 std::numeric_limits<double>::epsilon();

  std::vector<std::size_t> degenerate;
  for (std::size_t jj = 0; jj < m; ++jj) {
    std::size_t src = order[jj];
    r.singular_values[jj] = sigma[src];
    for (std::size_t i = 0; i < m; ++i) r.v(i, jj) = v(i, src);
    if (sigma[src] > floor && sigma[src] > 0.0) {
      double inv = 1.0 / sigma[src];
      for (std::size_t i = 0; i < n; ++i) r.u(i, jj) = w(i, src) * inv;
    } else {
      degenerate.push_back(jj);
    }
  }

  // Gram-Schmidt completion of U's degenerate columns, seeded from standard
  // basis vectors. "built" marks columns already valid to project against.
  std::vector<bool> built(m, true);
  for (std::size_t jj : degenerate) built[jj] = false;
  std::size_t next_axis = 0;
  for (std::size_t jj : degenerate) {
    std::vector<double> cand(n, 0.0);
    while (true) {
      if (next_axis >= n)
        throw NumericalError("svd: failed to complete orthonormal basis");
      std::fill(cand.begin(), cand.end(), 0.0);
      cand[next_axis++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < m; ++k) {
          if (!built[k]) continue;
          double d = 0.0;
          for (std::size_t i = 0; i < n; ++i) d += cand[i] * r.u(i, k);
          for (std::size_t i = 0; i < n; ++i) cand[i] -= d * r.u(i, k);
        }
      }
      double nrm = 0.0;
      for (double x : cand) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 0.5) {
        for (std::size_t i = 0; i < n; ++i) r.u(i, jj) = cand[i] / nrm;
        built[jj] = true;
        break;
      }
    }
  }
  return r;
}

}  // namespace detail

inline SvdResult svd(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0) throw DimensionError("svd of empty matrix");
  if (a.rows() >= a.cols()) return detail::svd_tall(a);
  SvdResult t = detail::svd_tall(transpose(a));
  return SvdResult{std::move(t.v), std::move(t.singular_values), std::move(t.u)};
}

/// Cutoff below which singular values are treated as zero:
/// max(rows, cols) * machine epsilon * largest singular value.
inline double default_rank_tolerance(const Matrix& a, const std::vector<double>& singular_values) {
  double smax = singular_values.empty() ? 0.0 : singular_values.front();
  return static_cast<double>(std::max(a.rows(), a.cols())) *
         std::numeric_limits<double>::epsilon() * smax;
}

inline Matrix pseudoinverse(const Matrix& a, double rank_tol) {
  if (rank_tol < 0.0) throw ConfigError("pseudoinverse: rank_tol must be >= 0");
  SvdResult f = svd(a);
  const std::size_t k = f.singular_values.size();
  // A+ = V * diag(1/sigma) * U^T over the kept spectrum.
  Matrix pinv(a.cols(), a.rows());
  for (std::size_t l = 0; l < k; ++l) {
    double s = f.singular_values[l];
    if (s <= rank_tol || s == 0.0) continue;
    double inv = 1.0 / s;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      double vi = f.v(i, l) * inv;
      if (vi == 0.0) continue;
      for (std::size_t j = 0; j < a.rows(); ++j) pinv(i, j) += vi * f.u(j, l);
    }
  }
  return pinv;
}

inline Matrix pseudoinverse(const Matrix& a) {
  SvdResult f = svd(a);
  double tol = default_rank_tolerance(a, f.singular_values);
  const std::size_t k = f.singular_values.size();
  Matrix pinv(a.cols(), a.rows());
  for (std::size_t l = 0; l < k; ++l) {
    double s = f.singular_values[l];
    if (s <= tol || s == 0.0) continue;
    double inv = 1.0 / s;
    for (std::size_t i = 0; i < a.cols(); ++i) {
      double vi = f.v(i, l) * inv;
      if (vi == 0.0) continue;
      for (std::size_t j = 0; j < a.rows(); ++j) pinv(i, j) += vi * f.u(j, l);
    }
  }
  return pinv;
}

/// Minimum-Frobenius-norm W minimizing ||A W - B||_F, computed through the
/// SVD of A so rank-deficient systems stay well-defined.
inline Matrix solve_least_squares(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("solve_least_squares: row counts " + std::to_string(a.rows()) +
                         " vs " + std::to_string(b.rows()));
  SvdResult f = svd(a);
  double tol = default_rank_tolerance(a, f.singular_values);
  const std::size_t k = f.singular_values.size();
  Matrix w(a.cols(), b.cols());
  for (std::size_t l = 0; l < k; ++l) {
    double s = f.singular_values[l];
    if (s <= tol || s == 0.0) continue;
    double inv = 1.0 / s;
    // w += (u_l^T B / sigma_l) outer v_l
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double proj = 0.0;
      for (std::size_t i = 0; i < a.rows(); ++i) proj += f.u(i, l) * b(i, j);
      proj *= inv;
      if (proj == 0.0) continue;
      for (std::size_t i = 0; i < a.cols(); ++i) w(i, j) += f.v(i, l) * proj;
    }
  }
  return w;
}

}  // namespace nfard
