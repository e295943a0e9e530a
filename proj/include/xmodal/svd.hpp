#pragma once

#include <Eigen/Dense>

namespace xmodal {

// a = u * diag(sigma) * v^T with u, v orthogonal and sigma descending, >= 0.
struct SvdResult {
  Eigen::MatrixXd u;
  Eigen::VectorXd sigma;
  Eigen::MatrixXd v;
  int sweeps = 0;
};

struct SvdOptions {
  double tolerance = 1e-12;  // max normalized column inner product at convergence
  int max_sweeps = 60;
};

// One-sided (Hestenes) Jacobi SVD of a square matrix.
//
// Columns of a working copy of `a` are rotated pairwise until all pairs are
// orthogonal to `tolerance` (cosine of the angle between them); the
// accumulated rotations form v, the column norms are sigma, and the
// normalized columns are u. Columns whose norm is negligible relative to the
// largest are replaced by an orthonormal completion so u stays orthogonal
// for rank-deficient input.
//
// Sign convention: the largest-magnitude entry of every column of u is
// positive (first such entry on ties), with v flipped to match. Equal
// singular values keep their original column order.
//
// Throws ArgumentError for non-square or non-finite input, NumericalError
// when `max_sweeps` is exhausted.
SvdResult svd(const Eigen::MatrixXd& a, const SvdOptions& options = {});

}  // namespace xmodal
