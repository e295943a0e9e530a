#include "xmodal/mapping.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "xmodal/binary_io.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/svd.hpp"

namespace xmodal {

namespace {

constexpr std::string_view kMapMagic = "XMAP";
constexpr std::uint32_t kMapVersion = 1;

std::string shape(const Eigen::MatrixXd& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

std::string_view to_string(MapMethod method) {
  switch (method) {
    case MapMethod::least_squares:
      return "least_squares";
    case MapMethod::procrustes:
      return "procrustes";
  }
  return "unknown";
}

MapMethod parse_map_method(std::string_view text) {
  if (text == "lsq" || text == "least_squares") return MapMethod::least_squares;
  if (text == "procrustes") return MapMethod::procrustes;
  throw ArgumentError("unknown map method '" + std::string(text) + "'");
}

LinearMap::LinearMap(Eigen::MatrixXd matrix, MapMethod method, double lambda)
    : matrix_(std::move(matrix)), method_(method), lambda_(lambda) {
  if (matrix_.rows() < 1 || matrix_.cols() < 1) {
    throw ArgumentError("linear map must be at least 1x1");
  }
  if (!matrix_.allFinite()) {
    throw NumericalError("linear map has non-finite entries");
  }
  if (!(lambda_ >= 0.0) || !std::isfinite(lambda_)) {
    throw ArgumentError("ridge coefficient must be finite and >= 0");
  }
  if (method_ == MapMethod::procrustes) {
    if (matrix_.rows() != matrix_.cols()) {
      throw ArgumentError("procrustes map must be square, got " + shape(matrix_));
    }
    if (lambda_ != 0.0) {
      throw ArgumentError("procrustes map carries no ridge coefficient");
    }
    const double err = orthogonality_error(matrix_);
    if (!(err < kOrthogonalityTolerance)) {
      std::ostringstream msg;
      msg << "procrustes map is not orthogonal: ||M^T M - I||_F = " << err;
      throw ValidationError(msg.str());
    }
  } else if (method_ != MapMethod::least_squares) {
    throw ArgumentError("unknown map method tag");
  }
}

double orthogonality_error(const Eigen::MatrixXd& m) {
  return (m.transpose() * m - Eigen::MatrixXd::Identity(m.cols(), m.cols())).norm();
}

double residual(const Eigen::MatrixXd& src, const Eigen::MatrixXd& map,
                const Eigen::MatrixXd& tgt) {
  return (src * map - tgt).norm();
}

LinearMap fit_least_squares(const Eigen::MatrixXd& src, const Eigen::MatrixXd& tgt, double lambda,
                            const LeastSquaresOptions& options) {
  if (src.rows() != tgt.rows()) {
    throw ArgumentError("least squares needs paired rows: src " + shape(src) + ", tgt " +
                        shape(tgt));
  }
  if (src.rows() < 1 || src.cols() < 1 || tgt.cols() < 1) {
    throw ArgumentError("least squares needs at least one row and column");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ArgumentError("ridge coefficient must be finite and >= 0");
  }
  if (!src.allFinite() || !tgt.allFinite()) {
    throw ArgumentError("least squares input contains non-finite values");
  }

  const auto d = src.cols();
  Eigen::MatrixXd gram = src.transpose() * src;
  gram.diagonal().array() += lambda;
  const Eigen::MatrixXd rhs = src.transpose() * tgt;

  if (lambda == 0.0) {
    // Exact 2-norm condition from the symmetric spectrum. Factorization
    // based estimates skip zero pivots and miss exact rank deficiency.
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    const double condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(condition <= options.max_condition)) {
      std::ostringstream msg;
      msg << "Gram matrix is ill-conditioned (condition " << condition << " > "
          << options.max_condition << "); rerun with a ridge coefficient lambda > 0";
      throw IllConditionedError(msg.str(), condition);
    }
  }

  Eigen::MatrixXd phi;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() == Eigen::Success) {
    phi = llt.solve(rhs);
  } else {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success) {
      throw NumericalError("pivoted LDL^T factorization of the Gram matrix failed");
    }
    phi = ldlt.solve(rhs);
  }
  if (!phi.allFinite()) {
    throw NumericalError("least squares solution is not finite (d=" + std::to_string(d) + ")");
  }
  return {std::move(phi), MapMethod::least_squares, lambda};
}

LinearMap fit_procrustes(const Eigen::MatrixXd& src, const Eigen::MatrixXd& tgt) {
  if (src.rows() != tgt.rows() || src.cols() != tgt.cols()) {
    throw ArgumentError("procrustes needs equal shapes: src " + shape(src) + ", tgt " +
                        shape(tgt));
  }
  if (src.rows() < 1 || src.cols() < 1) {
    throw ArgumentError("procrustes needs at least one row and column");
  }
  const Eigen::MatrixXd cross = src.transpose() * tgt;
  const auto dec = svd(cross);
  return {dec.u * dec.v.transpose(), MapMethod::procrustes};
}

Eigen::MatrixXd apply_map(const LinearMap& map, const Eigen::MatrixXd& src) {
  if (static_cast<std::size_t>(src.cols()) != map.d_src()) {
    throw ArgumentError("map expects " + std::to_string(map.d_src()) +
                        "-dim input, got " + std::to_string(src.cols()));
  }
  return src * map.matrix();
}

EmbeddingMatrix apply_map(const LinearMap& map, const EmbeddingMatrix& src) {
  return EmbeddingMatrix::from_double(apply_map(map, src.to_double()), src.ids());
}

std::string encode_map(const LinearMap& map) {
  io::ByteWriter w;
  w.put_bytes(kMapMagic);
  w.put_u32(kMapVersion);
  w.put_u8(static_cast<std::uint8_t>(map.method()));
  w.put_f64(map.lambda());
  w.put_u64(map.d_src());
  w.put_u64(map.d_tgt());
  const auto& m = map.matrix();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.put_f64(m(i, j));
  }
  return w.bytes();
}

LinearMap decode_map(std::string_view bytes, const std::string& context) {
  io::ByteReader r(bytes, context);
  try {
    if (bytes.size() < kMapMagic.size() || r.get_bytes(kMapMagic.size()) != kMapMagic) {
      throw FormatError(context + ": bad magic (expected \"XMAP\")");
    }
    const auto version = r.get_u32();
    if (version != kMapVersion) {
      throw FormatError(context + ": unsupported XMAP version " + std::to_string(version));
    }
    const auto tag = r.get_u8();
    if (tag != static_cast<std::uint8_t>(MapMethod::least_squares) &&
        tag != static_cast<std::uint8_t>(MapMethod::procrustes)) {
      throw FormatError(context + ": unknown method tag " + std::to_string(tag));
    }
    const double lambda = r.get_f64();
    const auto d_src = r.get_u64();
    const auto d_tgt = r.get_u64();
    if (d_src == 0 || d_tgt == 0 || d_src > r.remaining() / 8 ||
        d_src * d_tgt != r.remaining() / 8 || r.remaining() % 8 != 0) {
      std::ostringstream msg;
      msg << context << ": header declares " << d_src << "x" << d_tgt << " but "
          << r.remaining() << " payload bytes follow";
      throw FormatError(msg.str());
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(d_src), static_cast<Eigen::Index>(d_tgt));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get_f64();
    }
    return {std::move(m), static_cast<MapMethod>(tag), lambda};
  } catch (const CorruptionError& e) {
    throw FormatError(e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(context + ": " + e.what());
  }
}

void save_map(const LinearMap& map, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_map(map));
}

LinearMap load_map(const std::filesystem::path& path) {
  return decode_map(io::read_file(path), path.string());
}

}  // namespace xmodal
