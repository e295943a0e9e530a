#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "xmodal/embstore.hpp"

namespace xmodal {

enum class MapMethod : std::uint8_t {
  least_squares = 1,
  procrustes = 2,
};

std::string_view to_string(MapMethod method);
MapMethod parse_map_method(std::string_view text);  // "lsq" | "least_squares" | "procrustes"

// Fitted d_src x d_tgt cross-modal map: a source row x maps to x * matrix.
// Procrustes maps are square with matrix^T * matrix == I within 1e-6
// (Frobenius); the constructor enforces this and finiteness.
class LinearMap {
 public:
  static constexpr double kOrthogonalityTolerance = 1e-6;

  LinearMap(Eigen::MatrixXd matrix, MapMethod method, double lambda = 0.0);

  const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }
  MapMethod method() const noexcept { return method_; }
  double lambda() const noexcept { return lambda_; }
  std::size_t d_src() const noexcept { return static_cast<std::size_t>(matrix_.rows()); }
  std::size_t d_tgt() const noexcept { return static_cast<std::size_t>(matrix_.cols()); }

  friend bool operator==(const LinearMap& a, const LinearMap& b) {
    return a.method_ == b.method_ && a.lambda_ == b.lambda_ &&
           a.matrix_.rows() == b.matrix_.rows() && a.matrix_.cols() == b.matrix_.cols() &&
           a.matrix_ == b.matrix_;
  }

 private:
  Eigen::MatrixXd matrix_;
  MapMethod method_;
  double lambda_;
};

// ||m^T m - I||_F
double orthogonality_error(const Eigen::MatrixXd& m);

// ||src * map - tgt||_F
double residual(const Eigen::MatrixXd& src, const Eigen::MatrixXd& map, const Eigen::MatrixXd& tgt);

struct LeastSquaresOptions {
  // Unregularized solves refuse Gram matrices whose estimated condition
  // number exceeds this.
  double max_condition = 1e12;
};

// Solves (src^T src + lambda I) Phi = src^T tgt by Cholesky, falling back to
// a pivoted LDL^T factorization when the plain Cholesky breaks down.
// With lambda == 0 an ill-conditioned Gram matrix raises
// IllConditionedError instead of silently substituting a pseudo-inverse.
LinearMap fit_least_squares(const Eigen::MatrixXd& src, const Eigen::MatrixXd& tgt, double lambda,
                            const LeastSquaresOptions& options = {});

// Orthogonal Psi minimizing ||src Psi - tgt||_F: Psi = U V^T with
// U S V^T = svd(src^T tgt).
LinearMap fit_procrustes(const Eigen::MatrixXd& src, const Eigen::MatrixXd& tgt);

Eigen::MatrixXd apply_map(const LinearMap& map, const Eigen::MatrixXd& src);
EmbeddingMatrix apply_map(const LinearMap& map, const EmbeddingMatrix& src);

// XMAP container (little-endian): "XMAP", u32 version = 1, u8 method,
// f64 lambda, u64 d_src, u64 d_tgt, d_src*d_tgt float64 row-major.
std::string encode_map(const LinearMap& map);
LinearMap decode_map(std::string_view bytes, const std::string& context = "XMAP");
void save_map(const LinearMap& map, const std::filesystem::path& path);
LinearMap load_map(const std::filesystem::path& path);

}  // namespace xmodal
