#include "xmodal/gmlp.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "xmodal/errors.hpp"

namespace xmodal::gmlp {

namespace {

struct BlockCache {
  Eigen::MatrixXd xhat;         // L x D, normalized before scale/bias
  Eigen::VectorXd inv_sigma;    // L
  Eigen::MatrixXd normed;       // L x D
  Eigen::MatrixXd pre;          // L x F, before gelu
  Eigen::MatrixXd z;            // L x F
  Eigen::MatrixXd spatial;      // L x H, W_s z2 + b_s
  Eigen::MatrixXd gate;         // L x H
};

Eigen::MatrixXd forward_block(const Block& b, std::size_t half, const Eigen::MatrixXd& x,
                              BlockCache* cache) {
  const auto rows = x.rows();
  const auto d = static_cast<double>(x.cols());
  const auto h = static_cast<Eigen::Index>(half);

  Eigen::MatrixXd xhat(rows, x.cols());
  Eigen::VectorXd inv_sigma(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double mu = x.row(i).sum() / d;
    const Eigen::RowVectorXd centered = x.row(i).array() - mu;
    const double var = centered.squaredNorm() / d;
    inv_sigma(i) = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    xhat.row(i) = centered * inv_sigma(i);
  }
  Eigen::MatrixXd normed = (xhat.array().rowwise() * b.norm_scale.transpose().array()).matrix();
  normed.rowwise() += b.norm_bias.transpose();

  Eigen::MatrixXd pre = normed * b.w_u;
  pre.rowwise() += b.b_u.transpose();
  const Eigen::MatrixXd z = pre.unaryExpr([](double v) { return gelu(v); });

  Eigen::MatrixXd spatial = b.w_s * z.rightCols(h);
  spatial.colwise() += b.b_s;
  const Eigen::MatrixXd gate = z.leftCols(h).cwiseProduct(spatial);

  Eigen::MatrixXd y = gate * b.w_o;
  y.rowwise() += b.b_o.transpose();
  y += x;

  if (cache != nullptr) {
    *cache = {std::move(xhat), std::move(inv_sigma), std::move(normed), std::move(pre), z,
              std::move(spatial), gate};
  }
  return y;
}

// Accumulates into `g` and returns d loss / d block input.
Eigen::MatrixXd backward_block(const Block& b, const BlockCache& c, std::size_t half,
                               const Eigen::MatrixXd& dy, Block& g) {
  const auto h = static_cast<Eigen::Index>(half);
  const auto d = static_cast<double>(dy.cols());

  g.b_o += dy.colwise().sum().transpose();
  g.w_o += c.gate.transpose() * dy;
  const Eigen::MatrixXd dgate = dy * b.w_o.transpose();

  const Eigen::MatrixXd dz1 = dgate.cwiseProduct(c.spatial);
  const Eigen::MatrixXd dspatial = dgate.cwiseProduct(c.z.leftCols(h));
  g.w_s += dspatial * c.z.rightCols(h).transpose();
  g.b_s += dspatial.rowwise().sum();
  const Eigen::MatrixXd dz2 = b.w_s.transpose() * dspatial;

  Eigen::MatrixXd dpre(c.pre.rows(), c.pre.cols());
  dpre.leftCols(h) = dz1;
  dpre.rightCols(h) = dz2;
  dpre.array() *= c.pre.unaryExpr([](double v) { return gelu_derivative(v); }).array();

  g.w_u += c.normed.transpose() * dpre;
  g.b_u += dpre.colwise().sum().transpose();
  const Eigen::MatrixXd dnormed = dpre * b.w_u.transpose();

  g.norm_scale += dnormed.cwiseProduct(c.xhat).colwise().sum().transpose();
  g.norm_bias += dnormed.colwise().sum().transpose();
  const Eigen::MatrixXd dxhat =
      (dnormed.array().rowwise() * b.norm_scale.transpose().array()).matrix();

  Eigen::MatrixXd dx = dy;
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double mean_dxhat = dxhat.row(i).sum() / d;
    const double mean_proj = dxhat.row(i).dot(c.xhat.row(i)) / d;
    dx.row(i) += c.inv_sigma(i) *
                 (dxhat.row(i).array() - mean_dxhat - c.xhat.row(i).array() * mean_proj).matrix();
  }
  return dx;
}

std::string shape_of(const Eigen::MatrixXd& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <typename P, typename Fn>
void visit_tensors(P& params, Fn&& fn) {
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    auto& b = params.blocks[i];
    const auto prefix = "block" + std::to_string(i) + ".";
    fn(prefix + "norm_scale", b.norm_scale.data(), static_cast<std::size_t>(b.norm_scale.size()));
    fn(prefix + "norm_bias", b.norm_bias.data(), static_cast<std::size_t>(b.norm_bias.size()));
    fn(prefix + "w_u", b.w_u.data(), static_cast<std::size_t>(b.w_u.size()));
    fn(prefix + "b_u", b.b_u.data(), static_cast<std::size_t>(b.b_u.size()));
    fn(prefix + "w_s", b.w_s.data(), static_cast<std::size_t>(b.w_s.size()));
    fn(prefix + "b_s", b.b_s.data(), static_cast<std::size_t>(b.b_s.size()));
    fn(prefix + "w_o", b.w_o.data(), static_cast<std::size_t>(b.w_o.size()));
    fn(prefix + "b_o", b.b_o.data(), static_cast<std::size_t>(b.b_o.size()));
  }
}

struct ForwardTrace {
  std::vector<BlockCache> blocks;
};

Eigen::VectorXd encode_one(const Params& params, const GmlpConfig& cfg, const Eigen::MatrixXd& x,
                           ForwardTrace* trace) {
  Eigen::MatrixXd y = x;
  if (trace != nullptr) trace->blocks.resize(params.blocks.size());
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    y = forward_block(params.blocks[i], cfg.half_ffn(), y,
                      trace != nullptr ? &trace->blocks[i] : nullptr);
  }
  return pool(y, cfg.pooling);
}

void backprop_one(const Params& params, const GmlpConfig& cfg, const ForwardTrace& trace,
                  const Eigen::VectorXd& dh, Params& grads) {
  const auto rows = static_cast<Eigen::Index>(cfg.seq_len);
  Eigen::MatrixXd dy = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(cfg.d_model));
  if (cfg.pooling == Pooling::mean) {
    dy = (dh.transpose() / static_cast<double>(rows)).replicate(rows, 1);
  } else {
    dy.row(0) = dh.transpose();
  }
  for (std::size_t i = params.blocks.size(); i-- > 0;) {
    dy = backward_block(params.blocks[i], trace.blocks[i], cfg.half_ffn(), dy, grads.blocks[i]);
  }
}

}  // namespace

std::string_view to_string(Pooling pooling) {
  return pooling == Pooling::mean ? "mean" : "first_token";
}

Pooling parse_pooling(std::string_view text) {
  if (text == "mean") return Pooling::mean;
  if (text == "first_token" || text == "first") return Pooling::first_token;
  throw ArgumentError("unknown pooling '" + std::string(text) + "' (expected mean or first_token)");
}

void GmlpConfig::validate() const {
  if (seq_len < 1) throw ArgumentError("gmlp seq_len must be >= 1");
  if (d_model < 1) throw ArgumentError("gmlp d_model must be >= 1");
  if (d_ffn < 2 || d_ffn % 2 != 0) throw ArgumentError("gmlp d_ffn must be even and >= 2");
  if (n_blocks < 1) throw ArgumentError("gmlp n_blocks must be >= 1");
  if (pooling != Pooling::mean && pooling != Pooling::first_token) {
    throw ArgumentError("gmlp pooling mode is invalid");
  }
}

GmlpConfig GmlpConfig::defaults(std::size_t seq_len, std::size_t d_model) {
  return {seq_len, d_model, 2 * d_model, 2, Pooling::mean};
}

bool operator==(const Params& a, const Params& b) {
  if (a.blocks.size() != b.blocks.size()) return false;
  std::vector<std::vector<double>> flat_a;
  for_each_tensor(a, [&](const std::string&, const double* p, std::size_t n) {
    flat_a.emplace_back(p, p + n);
  });
  std::size_t i = 0;
  bool equal = true;
  for_each_tensor(b, [&](const std::string&, const double* p, std::size_t n) {
    equal = equal && i < flat_a.size() && flat_a[i] == std::vector<double>(p, p + n);
    ++i;
  });
  return equal && i == flat_a.size();
}

void for_each_tensor(Params& params,
                     const std::function<void(const std::string&, double*, std::size_t)>& fn) {
  visit_tensors(params, fn);
}

void for_each_tensor(const Params& params,
                     const std::function<void(const std::string&, const double*, std::size_t)>& fn) {
  visit_tensors(params, fn);
}

Params init_params(const GmlpConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto L = static_cast<Eigen::Index>(cfg.seq_len);
  const auto D = static_cast<Eigen::Index>(cfg.d_model);
  const auto F = static_cast<Eigen::Index>(cfg.d_ffn);
  const auto H = static_cast<Eigen::Index>(cfg.half_ffn());

  auto glorot = [&](Eigen::Index fan_in, Eigen::Index fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Eigen::MatrixXd m(fan_in, fan_out);
    for (Eigen::Index i = 0; i < fan_in; ++i) {
      for (Eigen::Index j = 0; j < fan_out; ++j) m(i, j) = rng.uniform(-limit, limit);
    }
    return m;
  };

  Params p;
  for (std::size_t n = 0; n < cfg.n_blocks; ++n) {
    Block b;
    b.norm_scale = Eigen::VectorXd::Ones(D);
    b.norm_bias = Eigen::VectorXd::Zero(D);
    b.w_u = glorot(D, F);
    b.b_u = Eigen::VectorXd::Zero(F);
    b.w_s.resize(L, L);
    for (Eigen::Index i = 0; i < L; ++i) {
      for (Eigen::Index j = 0; j < L; ++j) b.w_s(i, j) = rng.uniform(-1e-3, 1e-3);
    }
    b.b_s = Eigen::VectorXd::Ones(L);
    b.w_o = glorot(H, D);
    b.b_o = Eigen::VectorXd::Zero(D);
    p.blocks.push_back(std::move(b));
  }
  return p;
}

Params zeros_like(const Params& params) {
  Params z = params;
  for_each_tensor(z, [](const std::string&, double* p, std::size_t n) {
    std::fill(p, p + n, 0.0);
  });
  return z;
}

void validate(const Params& params, const GmlpConfig& cfg) {
  cfg.validate();
  if (params.blocks.size() != cfg.n_blocks) {
    throw ArgumentError("gmlp params have " + std::to_string(params.blocks.size()) +
                        " blocks, config expects " + std::to_string(cfg.n_blocks));
  }
  const auto L = static_cast<Eigen::Index>(cfg.seq_len);
  const auto D = static_cast<Eigen::Index>(cfg.d_model);
  const auto F = static_cast<Eigen::Index>(cfg.d_ffn);
  const auto H = static_cast<Eigen::Index>(cfg.half_ffn());
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    const auto& b = params.blocks[i];
    const bool ok = b.norm_scale.size() == D && b.norm_bias.size() == D && b.w_u.rows() == D &&
                    b.w_u.cols() == F && b.b_u.size() == F && b.w_s.rows() == L &&
                    b.w_s.cols() == L && b.b_s.size() == L && b.w_o.rows() == H &&
                    b.w_o.cols() == D && b.b_o.size() == D;
    if (!ok) {
      throw ArgumentError("gmlp block " + std::to_string(i) + " tensor shapes do not match config");
    }
  }
  for_each_tensor(params, [](const std::string& name, const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(p[i])) throw ValidationError("non-finite value in gmlp tensor " + name);
    }
  });
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Eigen::MatrixXd forward(const Params& params, const GmlpConfig& cfg, const Eigen::MatrixXd& x) {
  if (x.rows() != static_cast<Eigen::Index>(cfg.seq_len) ||
      x.cols() != static_cast<Eigen::Index>(cfg.d_model)) {
    throw ArgumentError("gmlp input is " + shape_of(x) + ", config expects " +
                        std::to_string(cfg.seq_len) + "x" + std::to_string(cfg.d_model));
  }
  if (params.blocks.size() != cfg.n_blocks) {
    throw ArgumentError("gmlp params do not match config block count");
  }
  Eigen::MatrixXd y = x;
  for (const auto& b : params.blocks) y = forward_block(b, cfg.half_ffn(), y, nullptr);
  return y;
}

Eigen::VectorXd pool(const Eigen::MatrixXd& y, Pooling mode) {
  if (mode == Pooling::first_token) return y.row(0).transpose();
  return y.colwise().mean().transpose();
}

Eigen::MatrixXd unflatten(std::span<const double> row, const GmlpConfig& cfg) {
  if (row.size() != cfg.input_dim()) {
    throw ArgumentError("embedding row has " + std::to_string(row.size()) +
                        " values, gmlp expects seq_len*d_model = " +
                        std::to_string(cfg.input_dim()));
  }
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(row.data(), static_cast<Eigen::Index>(cfg.seq_len),
                                    static_cast<Eigen::Index>(cfg.d_model));
}

Eigen::MatrixXd encode(const Params& params, const GmlpConfig& cfg, const Eigen::MatrixXd& rows) {
  validate(params, cfg);
  Eigen::MatrixXd out(rows.rows(), static_cast<Eigen::Index>(cfg.d_model));
  Eigen::VectorXd row(rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    row = rows.row(i).transpose();
    const auto x = unflatten({row.data(), static_cast<std::size_t>(row.size())}, cfg);
    out.row(i) = encode_one(params, cfg, x, nullptr).transpose();
  }
  return out;
}

LossResult contrastive_loss(const Eigen::MatrixXd& h_src, const Eigen::MatrixXd& h_tgt, double tau,
                            bool symmetric) {
  if (!(tau > 0.0)) throw ArgumentError("temperature must be > 0");
  if (h_src.rows() != h_tgt.rows() || h_src.cols() != h_tgt.cols() || h_src.rows() < 1) {
    throw ArgumentError("contrastive loss needs two nonempty batches of equal shape, got " +
                        shape_of(h_src) + " and " + shape_of(h_tgt));
  }
  const auto B = h_src.rows();

  auto normalize = [](const Eigen::MatrixXd& h, const char* side, Eigen::VectorXd& norms) {
    norms = h.rowwise().norm();
    Eigen::MatrixXd out = h;
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      if (!(norms(i) > 0.0) || !std::isfinite(norms(i))) {
        throw NumericalError(std::string("contrastive loss: ") + side + " row " +
                             std::to_string(i) + " has zero or non-finite norm");
      }
      out.row(i) /= norms(i);
    }
    return out;
  };
  Eigen::VectorXd src_norms;
  Eigen::VectorXd tgt_norms;
  const Eigen::MatrixXd a = normalize(h_src, "h_src", src_norms);
  const Eigen::MatrixXd b = normalize(h_tgt, "h_tgt", tgt_norms);
  const Eigen::MatrixXd logits = (a * b.transpose()) / tau;

  // Row-wise cross-entropy against the diagonal; returns the mean loss and
  // writes d loss / d logits.
  auto row_xent = [B](const Eigen::MatrixXd& z, Eigen::MatrixXd& dz) {
    double total = 0.0;
    dz.resize(B, B);
    for (Eigen::Index i = 0; i < B; ++i) {
      const double m = z.row(i).maxCoeff();
      const Eigen::RowVectorXd e = (z.row(i).array() - m).exp();
      const double sum = e.sum();
      total += m + std::log(sum) - z(i, i);
      dz.row(i) = e / sum;
      dz(i, i) -= 1.0;
    }
    dz /= static_cast<double>(B);
    return total / static_cast<double>(B);
  };

  LossResult out;
  Eigen::MatrixXd dlogits;
  out.loss = row_xent(logits, dlogits);
  if (symmetric) {
    Eigen::MatrixXd dlogits_t;
    const double reverse = row_xent(logits.transpose(), dlogits_t);
    out.loss = 0.5 * (out.loss + reverse);
    dlogits = 0.5 * (dlogits + dlogits_t.transpose());
  }
  const Eigen::MatrixXd dsim = dlogits / tau;
  const Eigen::MatrixXd da = dsim * b;
  const Eigen::MatrixXd db = dsim.transpose() * a;

  auto through_norm = [](const Eigen::MatrixXd& g, const Eigen::MatrixXd& unit,
                         const Eigen::VectorXd& norms) {
    Eigen::MatrixXd out(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      out.row(i) = (g.row(i) - g.row(i).dot(unit.row(i)) * unit.row(i)) / norms(i);
    }
    return out;
  };
  out.grad_src = through_norm(da, a, src_norms);
  out.grad_tgt = through_norm(db, b, tgt_norms);
  return out;
}

BatchGradients backward(const HeadPair& heads, const GmlpConfig& cfg,
                        const Eigen::MatrixXd& batch_src, const Eigen::MatrixXd& batch_tgt,
                        double tau, bool symmetric) {
  validate(heads.src, cfg);
  validate(heads.tgt, cfg);
  if (batch_src.rows() != batch_tgt.rows() || batch_src.rows() < 1) {
    throw ArgumentError("batch sides must have the same nonzero row count");
  }
  const auto B = batch_src.rows();
  const auto D = static_cast<Eigen::Index>(cfg.d_model);

  std::vector<ForwardTrace> src_traces(static_cast<std::size_t>(B));
  std::vector<ForwardTrace> tgt_traces(static_cast<std::size_t>(B));
  Eigen::MatrixXd h_src(B, D);
  Eigen::MatrixXd h_tgt(B, D);
  Eigen::VectorXd row;
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto k = static_cast<std::size_t>(i);
    row = batch_src.row(i).transpose();
    h_src.row(i) = encode_one(heads.src, cfg, unflatten({row.data(), static_cast<std::size_t>(row.size())}, cfg),
                              &src_traces[k])
                       .transpose();
    row = batch_tgt.row(i).transpose();
    h_tgt.row(i) = encode_one(heads.tgt, cfg, unflatten({row.data(), static_cast<std::size_t>(row.size())}, cfg),
                              &tgt_traces[k])
                       .transpose();
  }

  const auto loss = contrastive_loss(h_src, h_tgt, tau, symmetric);

  BatchGradients out;
  out.loss = loss.loss;
  out.src = zeros_like(heads.src);
  out.tgt = zeros_like(heads.tgt);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto k = static_cast<std::size_t>(i);
    backprop_one(heads.src, cfg, src_traces[k], loss.grad_src.row(i).transpose(), out.src);
    backprop_one(heads.tgt, cfg, tgt_traces[k], loss.grad_tgt.row(i).transpose(), out.tgt);
  }
  bool finite = std::isfinite(out.loss);
  for (const auto* g : {&out.src, &out.tgt}) {
    for_each_tensor(*g, [&](const std::string&, const double* p, std::size_t n) {
      for (std::size_t j = 0; j < n; ++j) finite = finite && std::isfinite(p[j]);
    });
  }
  if (!finite) {
    throw NumericalError("non-finite loss or gradient in gmlp backward pass");
  }
  return out;
}

}  // namespace xmodal::gmlp
