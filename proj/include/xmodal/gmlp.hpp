#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/embstore.hpp"
#include "xmodal/random.hpp"
#include "xmodal/retrieval.hpp"

namespace xmodal::gmlp {

enum class Pooling : std::uint8_t {
  mean = 1,
  first_token = 2,
};

std::string_view to_string(Pooling pooling);
Pooling parse_pooling(std::string_view text);

// Shape of one projection head. An input example is a seq_len x d_model
// token matrix; a flat embedding row of length seq_len * d_model is read
// token-major (token 0 occupies the first d_model values).
struct GmlpConfig {
  std::size_t seq_len = 1;
  std::size_t d_model = 0;
  std::size_t d_ffn = 0;  // even; the gate splits it into two halves
  std::size_t n_blocks = 2;
  Pooling pooling = Pooling::mean;

  std::size_t input_dim() const noexcept { return seq_len * d_model; }
  std::size_t half_ffn() const noexcept { return d_ffn / 2; }
  void validate() const;

  // n_blocks = 2, d_ffn = 2 * d_model, mean pooling.
  static GmlpConfig defaults(std::size_t seq_len, std::size_t d_model);

  friend bool operator==(const GmlpConfig&, const GmlpConfig&) = default;
};

// Per block, in serialization order.
struct Block {
  Eigen::VectorXd norm_scale;  // d_model
  Eigen::VectorXd norm_bias;   // d_model
  Eigen::MatrixXd w_u;         // d_model x d_ffn
  Eigen::VectorXd b_u;         // d_ffn
  Eigen::MatrixXd w_s;         // seq_len x seq_len, mixes tokens
  Eigen::VectorXd b_s;         // seq_len
  Eigen::MatrixXd w_o;         // d_ffn/2 x d_model
  Eigen::VectorXd b_o;         // d_model
};

struct Params {
  std::vector<Block> blocks;

  friend bool operator==(const Params& a, const Params& b);
};

// Calls fn(name, data, size) for every tensor in declaration order: block by
// block, then norm_scale, norm_bias, w_u, b_u, w_s, b_s, w_o, b_o. Matrices
// are visited through their storage (column-major).
void for_each_tensor(Params& params, const std::function<void(const std::string&, double*, std::size_t)>& fn);
void for_each_tensor(const Params& params,
                     const std::function<void(const std::string&, const double*, std::size_t)>& fn);

// Glorot-uniform w_u and w_o, zero biases, unit norm scale, w_s uniform in
// +-1e-3 and b_s = 1 so each gate starts close to its first half.
Params init_params(const GmlpConfig& cfg, Rng& rng);
Params zeros_like(const Params& params);
void validate(const Params& params, const GmlpConfig& cfg);

constexpr double kLayerNormEpsilon = 1e-5;

double gelu(double x);
double gelu_derivative(double x);

// Per block: n = layer_norm(x) (per token, over channels); z = gelu(n W_u + b_u);
// [z1 | z2] = z; gate = z1 .* (W_s z2 + b_s); y = x + gate W_o + b_o.
Eigen::MatrixXd forward(const Params& params, const GmlpConfig& cfg, const Eigen::MatrixXd& x);

Eigen::VectorXd pool(const Eigen::MatrixXd& y, Pooling mode);

// Token matrix of one flat embedding row.
Eigen::MatrixXd unflatten(std::span<const double> row, const GmlpConfig& cfg);

// Pooled head outputs for every row of `rows` (n x input_dim) -> n x d_model.
Eigen::MatrixXd encode(const Params& params, const GmlpConfig& cfg, const Eigen::MatrixXd& rows);

struct LossResult {
  double loss = 0.0;
  Eigen::MatrixXd grad_src;  // d loss / d h_src
  Eigen::MatrixXd grad_tgt;  // d loss / d h_tgt
};

// In-batch-negative contrastive loss over cosine similarities:
//   loss = (1/B) sum_i -log( exp(s_ii/tau) / sum_j exp(s_ij/tau) ),
//   s_ij = cos(h_src_i, h_tgt_j).
// With `symmetric`, the mean of this and the same loss on the transposed
// similarity matrix. Zero rows raise NumericalError naming the row.
LossResult contrastive_loss(const Eigen::MatrixXd& h_src, const Eigen::MatrixXd& h_tgt, double tau,
                            bool symmetric = false);

struct HeadPair {
  Params src;
  Params tgt;
};

struct BatchGradients {
  double loss = 0.0;
  Params src;
  Params tgt;
};

// Loss and exact gradients for both heads on one batch (rows are flat
// embeddings of length input_dim). For a tied head, add the two gradients.
BatchGradients backward(const HeadPair& heads, const GmlpConfig& cfg,
                        const Eigen::MatrixXd& batch_src, const Eigen::MatrixXd& batch_tgt,
                        double tau, bool symmetric = false);

struct TrainConfig {
  double tau = 0.05;
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  std::size_t epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool symmetric = false;
  bool shared_head = false;

  void validate() const;
};

struct TrainResult {
  HeadPair heads;  // identical when shared_head
  std::vector<double> epoch_losses;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

// Adam on both heads. Epochs shuffle the rows with the seeded generator that
// also drew the initialization, then take consecutive batches; a trailing
// batch with fewer than two rows is skipped since it has no negatives.
// Throws TrainingError with the epoch index if the loss stops being finite.
TrainResult train_head(const PairedDataset& train, const GmlpConfig& gcfg, const TrainConfig& tcfg,
                       const EpochCallback& on_epoch = {});

// Initialization exactly as train_head draws it for `tcfg`.
HeadPair initial_heads(const GmlpConfig& gcfg, const TrainConfig& tcfg);

// Recall of a held-out split with both sides passed through their heads:
// queries through the head of their side, gallery through the other.
RecallReport evaluate_heads(const PairedDataset& test, const HeadPair& heads, const GmlpConfig& cfg,
                            Direction direction, std::span<const std::size_t> ks);

// XGML container (little-endian): "XGML", u32 version = 1, u64 seq_len,
// u64 d_model, u64 d_ffn, u64 n_blocks, u8 pooling, then float64 tensors in
// declaration order, each row-major.
std::string encode_head(const GmlpConfig& cfg, const Params& params);
std::pair<GmlpConfig, Params> decode_head(std::string_view bytes,
                                          const std::string& context = "XGML");
void save_head(const GmlpConfig& cfg, const Params& params, const std::filesystem::path& path);
std::pair<GmlpConfig, Params> load_head(const std::filesystem::path& path);

// key=value config files. Blank lines and '#' comments are ignored.
std::map<std::string, std::string> parse_key_values(std::string_view text,
                                                    const std::string& context = "config");
// Unknown keys raise ArgumentError. `base` supplies unset values.
GmlpConfig gmlp_config_from(const std::map<std::string, std::string>& kv, GmlpConfig base);
TrainConfig train_config_from(const std::map<std::string, std::string>& kv, TrainConfig base = {});
std::string format_config(const GmlpConfig& cfg);
std::string format_config(const TrainConfig& cfg);

}  // namespace xmodal::gmlp
