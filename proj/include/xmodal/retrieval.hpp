#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmodal/embstore.hpp"
#include "xmodal/mapping.hpp"

namespace xmodal {

enum class Similarity {
  cosine,         // rows and queries L2-normalized, then inner product
  inner_product,  // raw inner product, for ablation
};

// Row-major 64-bit gallery, so each gallery row is contiguous.
using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Immutable exact-search gallery. Under cosine similarity every row has unit
// norm; zero rows are rejected at build time.
class RetrievalIndex {
 public:
  const RowMatrixD& gallery() const noexcept { return gallery_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<std::string>& groups() const noexcept { return groups_; }
  Similarity similarity() const noexcept { return similarity_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(gallery_.cols()); }

 private:
  friend RetrievalIndex build_index(const Eigen::MatrixXd&, std::vector<std::string>,
                                    std::vector<std::string>, Similarity);
  RowMatrixD gallery_;
  std::vector<std::string> ids_;
  std::vector<std::string> groups_;
  Similarity similarity_ = Similarity::cosine;
};

RetrievalIndex build_index(const Eigen::MatrixXd& gallery, std::vector<std::string> ids,
                           std::vector<std::string> groups,
                           Similarity similarity = Similarity::cosine);
RetrievalIndex build_index(const EmbeddingMatrix& gallery, std::vector<std::string> groups,
                           Similarity similarity = Similarity::cosine);

struct Hit {
  std::size_t row;
  std::string id;
  double score;
};

// Similarity of `query` to every gallery row, in gallery order. A zero query
// under cosine similarity scores 0 against everything.
std::vector<double> score_all(std::span<const double> query, const RetrievalIndex& index);

// Exactly k hits, scores descending, ties by ascending gallery row.
std::vector<Hit> topk(std::span<const double> query, const RetrievalIndex& index, std::size_t k);

enum class Direction {
  text_to_image,  // source side queries, target side gallery
  image_to_text,  // target side queries, source side gallery
};

std::string_view to_string(Direction direction);
Direction parse_direction(std::string_view text);

struct RecallReport {
  Direction direction = Direction::text_to_image;
  std::map<std::size_t, double> per_k;
  std::size_t n_queries = 0;

  nlohmann::ordered_json to_json() const;
};

inline const std::vector<std::size_t> kDefaultKs = {1, 5, 10, 20, 100};

// A query hits at k when any gallery row of its group ranks within the top k.
RecallReport recall_at_k(const Eigen::MatrixXd& queries, std::span<const std::string> query_groups,
                         const RetrievalIndex& index, std::span<const std::size_t> ks,
                         Direction direction = Direction::text_to_image);

// Queries and gallery for one direction over a paired test set. The side that
// can repeat within a group (an image listed once per caption) is
// deduplicated by id, keeping the first occurrence; the other side keeps
// every row.
struct DirectionalView {
  Eigen::MatrixXd queries;
  std::vector<std::string> query_ids;
  std::vector<std::string> query_groups;
  Eigen::MatrixXd gallery;
  std::vector<std::string> gallery_ids;
  std::vector<std::string> gallery_groups;
};

DirectionalView direction_view(const PairedDataset& test, Direction direction);

// Maps the query side with `map`, indexes the other side, scores recall.
RecallReport evaluate_direction(const PairedDataset& test, const LinearMap& map,
                                Direction direction, std::span<const std::size_t> ks,
                                Similarity similarity = Similarity::cosine);

// Per-k maximum over reports of the same direction.
RecallReport best_of(std::span<const RecallReport> reports);

}  // namespace xmodal
