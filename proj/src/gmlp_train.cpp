#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "xmodal/binary_io.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/gmlp.hpp"

namespace xmodal::gmlp {

namespace {

constexpr std::string_view kHeadMagic = "XGML";
constexpr std::uint32_t kHeadVersion = 1;

std::vector<std::span<double>> tensor_views(Params& p) {
  std::vector<std::span<double>> out;
  for_each_tensor(p, [&](const std::string&, double* data, std::size_t n) {
    out.emplace_back(data, n);
  });
  return out;
}

class Adam {
 public:
  Adam(const Params& shape, const TrainConfig& cfg)
      : m_(zeros_like(shape)), v_(zeros_like(shape)), cfg_(cfg) {}

  void step(Params& params, Params& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto p = tensor_views(params);
    auto g = tensor_views(grads);
    auto m = tensor_views(m_);
    auto v = tensor_views(v_);
    for (std::size_t k = 0; k < p.size(); ++k) {
      for (std::size_t i = 0; i < p[k].size(); ++i) {
        m[k][i] = cfg_.beta1 * m[k][i] + (1.0 - cfg_.beta1) * g[k][i];
        v[k][i] = cfg_.beta2 * v[k][i] + (1.0 - cfg_.beta2) * g[k][i] * g[k][i];
        const double m_hat = m[k][i] / c1;
        const double v_hat = v[k][i] / c2;
        p[k][i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.adam_epsilon);
      }
    }
  }

 private:
  Params m_;
  Params v_;
  TrainConfig cfg_;
  std::uint64_t t_ = 0;
};

void add_into(Params& acc, const Params& other) {
  auto a = tensor_views(acc);
  std::vector<const double*> b;
  for_each_tensor(other, [&](const std::string&, const double* data, std::size_t) {
    b.push_back(data);
  });
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].size(); ++i) a[k][i] += b[k][i];
  }
}

bool all_finite(const Params& p) {
  bool ok = true;
  for_each_tensor(p, [&](const std::string&, const double* data, std::size_t n) {
    for (std::size_t i = 0; i < n && ok; ++i) ok = std::isfinite(data[i]);
  });
  return ok;
}

HeadPair draw_heads(const GmlpConfig& gcfg, bool shared, Rng& rng) {
  HeadPair heads;
  heads.src = init_params(gcfg, rng);
  heads.tgt = shared ? heads.src : init_params(gcfg, rng);
  return heads;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_count(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ArgumentError("config key '" + key + "': expected a non-negative integer, got '" +
                        value + "'");
  }
  return out;
}

double to_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ArgumentError("config key '" + key + "': expected a number, got '" + value + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ArgumentError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ArgumentError("tau must be > 0");
  if (batch_size < 2) throw ArgumentError("batch_size must be >= 2 for in-batch negatives");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ArgumentError("learning_rate must be > 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ArgumentError("adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ArgumentError("adam_epsilon must be > 0");
}

HeadPair initial_heads(const GmlpConfig& gcfg, const TrainConfig& tcfg) {
  Rng rng(tcfg.seed);
  return draw_heads(gcfg, tcfg.shared_head, rng);
}

RecallReport evaluate_heads(const PairedDataset& test, const HeadPair& heads, const GmlpConfig& cfg,
                            Direction direction, std::span<const std::size_t> ks) {
  const auto view = direction_view(test, direction);
  const bool forward_dir = direction == Direction::text_to_image;
  const Eigen::MatrixXd q = encode(forward_dir ? heads.src : heads.tgt, cfg, view.queries);
  const Eigen::MatrixXd g = encode(forward_dir ? heads.tgt : heads.src, cfg, view.gallery);
  const auto index = build_index(g, view.gallery_ids, view.gallery_groups);
  return recall_at_k(q, view.query_groups, index, ks, direction);
}

TrainResult train_head(const PairedDataset& train, const GmlpConfig& gcfg, const TrainConfig& tcfg,
                       const EpochCallback& on_epoch) {
  gcfg.validate();
  tcfg.validate();
  if (train.rows() < 2) {
    throw ArgumentError("head training needs at least 2 pairs, got " +
                        std::to_string(train.rows()));
  }
  if (train.src_dim() != gcfg.input_dim() || train.tgt_dim() != gcfg.input_dim()) {
    throw ArgumentError("training embeddings are " + std::to_string(train.src_dim()) + "/" +
                        std::to_string(train.tgt_dim()) + "-dim, gmlp expects seq_len*d_model = " +
                        std::to_string(gcfg.input_dim()));
  }

  Rng rng(tcfg.seed);
  TrainResult result;
  result.heads = draw_heads(gcfg, tcfg.shared_head, rng);
  Adam adam_src(result.heads.src, tcfg);
  Adam adam_tgt(result.heads.tgt, tcfg);

  const Eigen::MatrixXd src = train.src.cast<double>();
  const Eigen::MatrixXd tgt = train.tgt.cast<double>();
  const std::size_t n = train.rows();
  const std::size_t batch = std::min(tcfg.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t loss_rows = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      if (count < 2) continue;
      Eigen::MatrixXd bs(static_cast<Eigen::Index>(count), src.cols());
      Eigen::MatrixXd bt(static_cast<Eigen::Index>(count), tgt.cols());
      for (std::size_t i = 0; i < count; ++i) {
        bs.row(static_cast<Eigen::Index>(i)) = src.row(static_cast<Eigen::Index>(order[start + i]));
        bt.row(static_cast<Eigen::Index>(i)) = tgt.row(static_cast<Eigen::Index>(order[start + i]));
      }
      BatchGradients g;
      try {
        g = backward(result.heads, gcfg, bs, bt, tcfg.tau, tcfg.symmetric);
      } catch (const NumericalError& e) {
        throw TrainingError("training diverged in epoch " + std::to_string(epoch) + ": " +
                                e.what(),
                            epoch);
      } catch (const ValidationError& e) {
        throw TrainingError("training diverged in epoch " + std::to_string(epoch) + ": " +
                                e.what(),
                            epoch);
      }
      if (tcfg.shared_head) {
        add_into(g.src, g.tgt);
        adam_src.step(result.heads.src, g.src);
        result.heads.tgt = result.heads.src;
      } else {
        adam_src.step(result.heads.src, g.src);
        adam_tgt.step(result.heads.tgt, g.tgt);
      }
      loss_sum += g.loss * static_cast<double>(count);
      loss_rows += count;
    }
    const double mean = loss_sum / static_cast<double>(loss_rows);
    if (!std::isfinite(mean) || !all_finite(result.heads.src) || !all_finite(result.heads.tgt)) {
      throw TrainingError("training diverged in epoch " + std::to_string(epoch) +
                              " (non-finite loss or parameters)",
                          epoch);
    }
    result.epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

std::string encode_head(const GmlpConfig& cfg, const Params& params) {
  validate(params, cfg);
  io::ByteWriter w;
  w.put_bytes(kHeadMagic);
  w.put_u32(kHeadVersion);
  w.put_u64(cfg.seq_len);
  w.put_u64(cfg.d_model);
  w.put_u64(cfg.d_ffn);
  w.put_u64(cfg.n_blocks);
  w.put_u8(static_cast<std::uint8_t>(cfg.pooling));
  auto put_matrix = [&](const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) w.put_f64(m(i, j));
    }
  };
  auto put_vector = [&](const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) w.put_f64(v(i));
  };
  for (const auto& b : params.blocks) {
    put_vector(b.norm_scale);
    put_vector(b.norm_bias);
    put_matrix(b.w_u);
    put_vector(b.b_u);
    put_matrix(b.w_s);
    put_vector(b.b_s);
    put_matrix(b.w_o);
    put_vector(b.b_o);
  }
  return w.bytes();
}

std::pair<GmlpConfig, Params> decode_head(std::string_view bytes, const std::string& context) {
  io::ByteReader r(bytes, context);
  try {
    if (bytes.size() < kHeadMagic.size() || r.get_bytes(kHeadMagic.size()) != kHeadMagic) {
      throw FormatError(context + ": bad magic (expected \"XGML\")");
    }
    const auto version = r.get_u32();
    if (version != kHeadVersion) {
      throw FormatError(context + ": unsupported XGML version " + std::to_string(version));
    }
    GmlpConfig cfg;
    cfg.seq_len = r.get_u64();
    cfg.d_model = r.get_u64();
    cfg.d_ffn = r.get_u64();
    cfg.n_blocks = r.get_u64();
    const auto pooling = r.get_u8();
    if (pooling != static_cast<std::uint8_t>(Pooling::mean) &&
        pooling != static_cast<std::uint8_t>(Pooling::first_token)) {
      throw FormatError(context + ": unknown pooling code " + std::to_string(pooling));
    }
    cfg.pooling = static_cast<Pooling>(pooling);
    cfg.validate();

    const std::size_t L = cfg.seq_len;
    const std::size_t D = cfg.d_model;
    const std::size_t F = cfg.d_ffn;
    const std::size_t H = cfg.half_ffn();
    const std::size_t per_block = 2 * D + D * F + F + L * L + L + H * D + D;
    if (per_block > r.remaining() / 8 / cfg.n_blocks ||
        per_block * cfg.n_blocks * 8 != r.remaining()) {
      throw FormatError(context + ": payload size does not match the declared config");
    }
    auto get_matrix = [&](std::size_t rows, std::size_t cols) {
      Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get_f64();
      }
      return m;
    };
    auto get_vector = [&](std::size_t n) {
      Eigen::VectorXd v(static_cast<Eigen::Index>(n));
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = r.get_f64();
      return v;
    };
    Params params;
    for (std::size_t n = 0; n < cfg.n_blocks; ++n) {
      Block b;
      b.norm_scale = get_vector(D);
      b.norm_bias = get_vector(D);
      b.w_u = get_matrix(D, F);
      b.b_u = get_vector(F);
      b.w_s = get_matrix(L, L);
      b.b_s = get_vector(L);
      b.w_o = get_matrix(H, D);
      b.b_o = get_vector(D);
      params.blocks.push_back(std::move(b));
    }
    validate(params, cfg);
    return {cfg, std::move(params)};
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(context + ": " + e.what());
  }
}

void save_head(const GmlpConfig& cfg, const Params& params, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_head(cfg, params));
}

std::pair<GmlpConfig, Params> load_head(const std::filesystem::path& path) {
  return decode_head(io::read_file(path), path.string());
}

std::map<std::string, std::string> parse_key_values(std::string_view text,
                                                    const std::string& context) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError(context + ":" + std::to_string(line_no) + ": expected key=value");
    }
    auto key = trim(std::string_view(body).substr(0, eq));
    auto value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) {
      throw ArgumentError(context + ":" + std::to_string(line_no) + ": empty key");
    }
    out[std::move(key)] = std::move(value);
  }
  return out;
}

GmlpConfig gmlp_config_from(const std::map<std::string, std::string>& kv, GmlpConfig base) {
  for (const auto& [key, value] : kv) {
    if (key == "seq_len") {
      base.seq_len = to_count(key, value);
    } else if (key == "d_model") {
      base.d_model = to_count(key, value);
    } else if (key == "d_ffn") {
      base.d_ffn = to_count(key, value);
    } else if (key == "n_blocks") {
      base.n_blocks = to_count(key, value);
    } else if (key == "pooling") {
      base.pooling = parse_pooling(value);
    } else {
      throw ArgumentError("unknown gmlp config key '" + key + "'");
    }
  }
  return base;
}

TrainConfig train_config_from(const std::map<std::string, std::string>& kv, TrainConfig base) {
  for (const auto& [key, value] : kv) {
    if (key == "tau") {
      base.tau = to_real(key, value);
    } else if (key == "batch_size") {
      base.batch_size = to_count(key, value);
    } else if (key == "learning_rate" || key == "lr") {
      base.learning_rate = to_real(key, value);
    } else if (key == "epochs") {
      base.epochs = to_count(key, value);
    } else if (key == "beta1") {
      base.beta1 = to_real(key, value);
    } else if (key == "beta2") {
      base.beta2 = to_real(key, value);
    } else if (key == "adam_epsilon") {
      base.adam_epsilon = to_real(key, value);
    } else if (key == "seed") {
      base.seed = to_count(key, value);
    } else if (key == "symmetric") {
      base.symmetric = to_bool(key, value);
    } else if (key == "shared_head") {
      base.shared_head = to_bool(key, value);
    } else {
      throw ArgumentError("unknown train config key '" + key + "'");
    }
  }
  return base;
}

std::string format_config(const GmlpConfig& cfg) {
  std::ostringstream out;
  out << "seq_len=" << cfg.seq_len << "\n"
      << "d_model=" << cfg.d_model << "\n"
      << "d_ffn=" << cfg.d_ffn << "\n"
      << "n_blocks=" << cfg.n_blocks << "\n"
      << "pooling=" << to_string(cfg.pooling) << "\n";
  return out.str();
}

std::string format_config(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "tau=" << real_text(cfg.tau) << "\n"
      << "batch_size=" << cfg.batch_size << "\n"
      << "learning_rate=" << real_text(cfg.learning_rate) << "\n"
      << "epochs=" << cfg.epochs << "\n"
      << "beta1=" << real_text(cfg.beta1) << "\n"
      << "beta2=" << real_text(cfg.beta2) << "\n"
      << "adam_epsilon=" << real_text(cfg.adam_epsilon) << "\n"
      << "seed=" << cfg.seed << "\n"
      << "symmetric=" << (cfg.symmetric ? "true" : "false") << "\n"
      << "shared_head=" << (cfg.shared_head ? "true" : "false") << "\n";
  return out.str();
}

}  // namespace xmodal::gmlp
