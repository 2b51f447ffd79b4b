#pragma once

// Dense symmetric linear algebra used by the kernel and linearized dynamics.
// Everything here is double precision and single threaded, so results are
// reproducible bit for bit on a given build.

#include <Eigen/Dense>

#include <functional>
#include <optional>

namespace ntk {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Square matrix checked for symmetry on construction. The stored entries are
/// the symmetrized average (A + A^T) / 2 so downstream code can rely on exact
/// symmetry.
class SymMatrix {
 public:
  /// Throws InvalidArgument if `m` is empty, not square, or asymmetric beyond
  /// `tolerance * max(1, max|m_ij|)`.
  explicit SymMatrix(const Matrix& m, double tolerance = 1e-12);

  static SymMatrix identity(Eigen::Index dim);

  const Matrix& matrix() const { return m_; }
  Eigen::Index dim() const { return m_.rows(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
  double trace() const { return m_.trace(); }

 private:
  Matrix m_;
};

struct EigDecomp {
  Vector eigenvalues;   // ascending
  Matrix eigenvectors;  // orthonormal columns, matching eigenvalues
};

/// Lower-triangular Cholesky factor of A + jitter * I.
class Cholesky {
 public:
  /// Factors A + jitter*I. If that fails, retries once with the default jitter
  /// 1e-10 * trace(A) / dim added on top. Throws NotPositiveDefinite when both
  /// attempts fail.
  explicit Cholesky(const SymMatrix& a, double jitter = 0.0);

  Matrix solve(const Matrix& b) const;
  Vector solve(const Vector& b) const;

  /// Total jitter that ended up on the diagonal.
  double jitter() const { return jitter_; }
  const Matrix& lower() const { return l_; }

 private:
  Matrix l_;
  double jitter_ = 0.0;
};

/// Solves (A + jitter*I) X = B.
Matrix cholesky_solve(const SymMatrix& a, const Matrix& b, double jitter = 0.0);

/// Cyclic Jacobi eigendecomposition with a budget of `max_sweeps` sweeps.
/// Throws NoConvergence if the off-diagonal mass has not vanished by then.
EigDecomp sym_eig(const SymMatrix& a, int max_sweeps = 100);

/// Q diag(fn(lambda)) Q^T V for a precomputed decomposition.
Matrix spectral_apply(const EigDecomp& eig, const std::function<double(double)>& fn,
                      const Matrix& v);

/// e^{-tA} V through the eigendecomposition of A.
Matrix exp_action(const SymMatrix& a, double t, const Matrix& v);
Matrix exp_action(const EigDecomp& eig, double t, const Matrix& v);

/// Largest eigenvalue via sym_eig.
double max_eigenvalue(const SymMatrix& a);

}  // namespace ntk
