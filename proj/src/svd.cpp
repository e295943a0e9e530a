#include "xmodal/svd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

// Completes u's columns in `missing` to an orthonormal basis, drawing
// candidates from the standard basis and keeping the one with the largest
// residual after two rounds of Gram-Schmidt.
void complete_basis(Eigen::MatrixXd& u, const std::vector<bool>& valid) {
  const auto d = u.rows();
  std::vector<Eigen::Index> basis;
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    if (valid[static_cast<std::size_t>(j)]) basis.push_back(j);
  }
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    if (valid[static_cast<std::size_t>(j)]) continue;
    Eigen::VectorXd best;
    double best_norm = -1.0;
    for (Eigen::Index k = 0; k < d; ++k) {
      Eigen::VectorXd cand = Eigen::VectorXd::Unit(d, k);
      for (int pass = 0; pass < 2; ++pass) {
        for (auto b : basis) cand -= u.col(b).dot(cand) * u.col(b);
      }
      const double n = cand.norm();
      if (n > best_norm + 1e-12) {
        best_norm = n;
        best = cand / n;
      }
    }
    u.col(j) = best;
    basis.push_back(j);
  }
}

}  // namespace

SvdResult svd(const Eigen::MatrixXd& a, const SvdOptions& options) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    std::ostringstream msg;
    msg << "svd expects a nonempty square matrix, got " << a.rows() << "x" << a.cols();
    throw ArgumentError(msg.str());
  }
  if (!a.allFinite()) {
    throw ArgumentError("svd input contains non-finite values");
  }
  const auto d = a.cols();
  Eigen::MatrixXd w = a;
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(d, d);

  // Below this cosine a rotation cannot improve orthogonality in 64-bit.
  constexpr double kRotateFloor = 4.0 * std::numeric_limits<double>::epsilon();

  int sweep = 0;
  double off = 0.0;
  for (; sweep < options.max_sweeps; ++sweep) {
    off = 0.0;
    for (Eigen::Index p = 0; p + 1 < d; ++p) {
      for (Eigen::Index q = p + 1; q < d; ++q) {
        const double alpha = w.col(p).squaredNorm();
        const double beta = w.col(q).squaredNorm();
        const double gamma = w.col(p).dot(w.col(q));
        if (alpha == 0.0 || beta == 0.0) continue;
        const double cosine = std::abs(gamma) / std::sqrt(alpha * beta);
        off = std::max(off, cosine);
        if (cosine <= kRotateFloor) continue;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::hypot(1.0, t);
        const double s = c * t;
        for (auto* m : {&w, &v}) {
          for (Eigen::Index i = 0; i < m->rows(); ++i) {
            const double xp = (*m)(i, p);
            const double xq = (*m)(i, q);
            (*m)(i, p) = c * xp - s * xq;
            (*m)(i, q) = s * xp + c * xq;
          }
        }
      }
    }
    if (off < options.tolerance) break;
  }
  if (sweep == options.max_sweeps) {
    std::ostringstream msg;
    msg << "Jacobi SVD did not converge after " << options.max_sweeps
        << " sweeps (max off-diagonal cosine " << off << ")";
    throw NumericalError(msg.str());
  }

  Eigen::VectorXd norms(d);
  for (Eigen::Index j = 0; j < d; ++j) norms(j) = w.col(j).norm();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return norms(x) > norms(y); });

  SvdResult out;
  out.u.resize(d, d);
  out.v.resize(d, d);
  out.sigma.resize(d);
  out.sweeps = sweep + 1;

  const double cutoff = norms.maxCoeff() * static_cast<double>(d) *
                        std::numeric_limits<double>::epsilon();
  std::vector<bool> valid(static_cast<std::size_t>(d), true);
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto src = order[static_cast<std::size_t>(j)];
    const double s = norms(src);
    out.v.col(j) = v.col(src);
    if (s > cutoff && s > 0.0) {
      out.sigma(j) = s;
      out.u.col(j) = w.col(src) / s;
    } else {
      out.sigma(j) = 0.0;
      out.u.col(j).setZero();
      valid[static_cast<std::size_t>(j)] = false;
    }
  }
  if (std::find(valid.begin(), valid.end(), false) != valid.end()) {
    complete_basis(out.u, valid);
  }

  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (std::abs(out.u(i, j)) > best) {
        best = std::abs(out.u(i, j));
        arg = i;
      }
    }
    if (out.u(arg, j) < 0.0) {
      out.u.col(j) = -out.u.col(j);
      out.v.col(j) = -out.v.col(j);
    }
  }
  return out;
}

}  // namespace xmodal
