#include "ntk/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "ntk/error.hpp"

namespace ntk {

SymMatrix::SymMatrix(const Matrix& m, double tolerance) {
  if (m.rows() == 0 || m.rows() != m.cols()) {
    throw InvalidArgument("SymMatrix: expected a non-empty square matrix, got " +
                          std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= tolerance * scale)) {
    throw InvalidArgument("SymMatrix: asymmetry " + std::to_string(asym) +
                          " exceeds tolerance");
  }
  m_ = 0.5 * (m + m.transpose());
}

SymMatrix SymMatrix::identity(Eigen::Index dim) {
  return SymMatrix(Matrix::Identity(dim, dim));
}

namespace {

// In-place lower Cholesky of `a` (only the lower triangle is read). Returns
// false on a non-positive pivot.
bool factor_lower(Matrix& a) {
  const Eigen::Index n = a.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    a(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / ljj;
    }
  }
  a.triangularView<Eigen::StrictlyUpper>().setZero();
  return true;
}

}  // namespace

Cholesky::Cholesky(const SymMatrix& a, double jitter) {
  if (jitter < 0.0) throw InvalidArgument("Cholesky: jitter must be nonnegative");
  const Eigen::Index n = a.dim();
  l_ = a.matrix();
  l_.diagonal().array() += jitter;
  jitter_ = jitter;
  if (factor_lower(l_)) return;

  const double extra = 1e-10 * std::abs(a.trace()) / static_cast<double>(n);
  l_ = a.matrix();
  jitter_ = jitter + extra;
  l_.diagonal().array() += jitter_;
  if (extra > 0.0 && factor_lower(l_)) return;
  throw NotPositiveDefinite("Cholesky: matrix of dimension " + std::to_string(n) +
                            " is not positive definite even with jitter " +
                            std::to_string(jitter_));
}

Matrix Cholesky::solve(const Matrix& b) const {
  if (b.rows() != l_.rows()) {
    throw DimensionMismatch("Cholesky::solve: rhs has " + std::to_string(b.rows()) +
                            " rows, expected " + std::to_string(l_.rows()));
  }
  Matrix x = l_.triangularView<Eigen::Lower>().solve(b);
  l_.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
  return x;
}

Vector Cholesky::solve(const Vector& b) const {
  Matrix x = solve(Matrix(b));
  return x.col(0);
}

Matrix cholesky_solve(const SymMatrix& a, const Matrix& b, double jitter) {
  return Cholesky(a, jitter).solve(b);
}

EigDecomp sym_eig(const SymMatrix& sym, int max_sweeps) {
  const Eigen::Index n = sym.dim();
  Matrix a = sym.matrix();
  Matrix v = Matrix::Identity(n, n);

  auto off_norm = [&]() {
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < j; ++i) s += a(i, j) * a(i, j);
    return std::sqrt(2.0 * s);
  };
  const double total = std::max(a.norm(), std::numeric_limits<double>::min());

  bool converged = off_norm() <= 1e-15 * total;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Skip rotations whose effect is below the diagonal's precision.
        if (std::abs(apq) < 1e-18 * (std::abs(app) + std::abs(aqq)) && sweep > 3) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);

        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          const double nkp = akp - s * (akq + tau * akp);
          const double nkq = akq + s * (akp - tau * akq);
          a(k, p) = a(p, k) = nkp;
          a(k, q) = a(q, k) = nkq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = vkp - s * (vkq + tau * vkp);
          v(k, q) = vkq + s * (vkp - tau * vkq);
        }
      }
    }
    converged = off_norm() <= 1e-15 * total;
  }
  if (!converged) {
    throw NoConvergence("sym_eig: Jacobi iteration did not converge in " +
                        std::to_string(max_sweeps) + " sweeps");
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) < a(j, j); });
  EigDecomp out{Vector(n), Matrix(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    out.eigenvalues(k) = a(src, src);
    out.eigenvectors.col(k) = v.col(src);
  }
  return out;
}

Matrix spectral_apply(const EigDecomp& eig, const std::function<double(double)>& fn,
                      const Matrix& v) {
  if (v.rows() != eig.eigenvectors.rows()) {
    throw DimensionMismatch("spectral_apply: operand has " + std::to_string(v.rows()) +
                            " rows, expected " + std::to_string(eig.eigenvectors.rows()));
  }
  Vector d(eig.eigenvalues.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = fn(eig.eigenvalues(i));
  Matrix coeffs = eig.eigenvectors.transpose() * v;
  coeffs = d.asDiagonal() * coeffs;
  return eig.eigenvectors * coeffs;
}

Matrix exp_action(const EigDecomp& eig, double t, const Matrix& v) {
  if (t < 0.0) throw InvalidArgument("exp_action: t must be nonnegative");
  if (t == 0.0) return v;
  return spectral_apply(eig, [t](double lambda) { return std::exp(-t * lambda); }, v);
}

Matrix exp_action(const SymMatrix& a, double t, const Matrix& v) {
  if (t < 0.0) throw InvalidArgument("exp_action: t must be nonnegative");
  if (v.rows() != a.dim()) {
    throw DimensionMismatch("exp_action: operand row count does not match matrix");
  }
  if (t == 0.0) return v;
  return exp_action(sym_eig(a), t, v);
}

double max_eigenvalue(const SymMatrix& a) {
  return sym_eig(a).eigenvalues(a.dim() - 1);
}

}  // namespace ntk
