#include "xmodal/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "xmodal/errors.hpp"

namespace xmodal {

namespace {

// Strict ranking order: higher score first, then lower gallery row.
struct RankBefore {
  const std::vector<double>& scores;
  bool operator()(std::size_t a, std::size_t b) const {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  }
};

}  // namespace

RetrievalIndex build_index(const Eigen::MatrixXd& gallery, std::vector<std::string> ids,
                           std::vector<std::string> groups, Similarity similarity) {
  const auto n = static_cast<std::size_t>(gallery.rows());
  if (n == 0 || gallery.cols() == 0) {
    throw ArgumentError("cannot build an index over an empty gallery");
  }
  if (groups.size() != n || ids.size() != n) {
    throw ArgumentError("gallery has " + std::to_string(n) + " rows but " +
                        std::to_string(ids.size()) + " ids and " + std::to_string(groups.size()) +
                        " groups");
  }
  if (!gallery.allFinite()) {
    throw ValidationError("gallery contains non-finite values");
  }
  RetrievalIndex index;
  index.gallery_ = gallery;
  if (similarity == Similarity::cosine) {
    for (Eigen::Index i = 0; i < index.gallery_.rows(); ++i) {
      const double norm = index.gallery_.row(i).norm();
      if (norm == 0.0) {
        throw ValidationError("gallery row '" + ids[static_cast<std::size_t>(i)] +
                              "' is zero and has no cosine similarity");
      }
      index.gallery_.row(i) /= norm;
    }
  }
  index.ids_ = std::move(ids);
  index.groups_ = std::move(groups);
  index.similarity_ = similarity;
  return index;
}

RetrievalIndex build_index(const EmbeddingMatrix& gallery, std::vector<std::string> groups,
                           Similarity similarity) {
  return build_index(gallery.to_double(), gallery.ids(), std::move(groups), similarity);
}

std::vector<double> score_all(std::span<const double> query, const RetrievalIndex& index) {
  if (query.size() != index.dim()) {
    throw ArgumentError("query has dimension " + std::to_string(query.size()) +
                        ", gallery has " + std::to_string(index.dim()));
  }
  Eigen::Map<const Eigen::VectorXd> q(query.data(), static_cast<Eigen::Index>(query.size()));
  Eigen::VectorXd qn = q;
  if (index.similarity() == Similarity::cosine) {
    const double norm = q.norm();
    if (norm > 0.0) qn /= norm;
  }
  const Eigen::VectorXd s = index.gallery() * qn;
  return {s.data(), s.data() + s.size()};
}

std::vector<Hit> topk(std::span<const double> query, const RetrievalIndex& index, std::size_t k) {
  if (k < 1 || k > index.size()) {
    throw ArgumentError("k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(index.size()) + "]");
  }
  const auto scores = score_all(query, index);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    RankBefore{scores});
  std::vector<Hit> hits;
  hits.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    hits.push_back({order[i], index.ids()[order[i]], scores[order[i]]});
  }
  return hits;
}

std::string_view to_string(Direction direction) {
  return direction == Direction::text_to_image ? "text_to_image" : "image_to_text";
}

Direction parse_direction(std::string_view text) {
  if (text == "text_to_image" || text == "t2i") return Direction::text_to_image;
  if (text == "image_to_text" || text == "i2t") return Direction::image_to_text;
  throw ArgumentError("unknown direction '" + std::string(text) +
                      "' (expected text_to_image or image_to_text)");
}

nlohmann::ordered_json RecallReport::to_json() const {
  nlohmann::ordered_json j;
  j["direction"] = std::string(to_string(direction));
  j["n_queries"] = n_queries;
  nlohmann::ordered_json recall = nlohmann::ordered_json::object();
  for (const auto& [k, r] : per_k) recall[std::to_string(k)] = r;
  j["recall"] = std::move(recall);
  return j;
}

RecallReport recall_at_k(const Eigen::MatrixXd& queries, std::span<const std::string> query_groups,
                         const RetrievalIndex& index, std::span<const std::size_t> ks,
                         Direction direction) {
  const auto n_queries = static_cast<std::size_t>(queries.rows());
  if (n_queries == 0) {
    throw ArgumentError("recall needs at least one query");
  }
  if (query_groups.size() != n_queries) {
    throw ArgumentError("got " + std::to_string(query_groups.size()) + " query groups for " +
                        std::to_string(n_queries) + " queries");
  }
  if (ks.empty()) {
    throw ArgumentError("recall needs at least one k");
  }
  for (auto k : ks) {
    if (k < 1 || k > index.size()) {
      throw ArgumentError("k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(index.size()) + "] (gallery size)");
    }
  }

  std::unordered_map<std::string_view, std::vector<std::size_t>> relevant;
  for (std::size_t i = 0; i < index.size(); ++i) relevant[index.groups()[i]].push_back(i);

  // For each query, the 0-based rank of its best-ranked relevant gallery row
  // (n means no relevant row exists).
  std::vector<std::size_t> best_rank(n_queries, index.size());
  Eigen::VectorXd q(queries.cols());
  for (std::size_t qi = 0; qi < n_queries; ++qi) {
    const auto it = relevant.find(query_groups[qi]);
    if (it == relevant.end()) continue;
    q = queries.row(static_cast<Eigen::Index>(qi)).transpose();
    const auto scores = score_all({q.data(), static_cast<std::size_t>(q.size())}, index);
    const RankBefore before{scores};
    const std::size_t first =
        *std::min_element(it->second.begin(), it->second.end(), before);
    std::size_t rank = 0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (before(j, first)) ++rank;
    }
    best_rank[qi] = rank;
  }

  RecallReport report;
  report.direction = direction;
  report.n_queries = n_queries;
  for (auto k : ks) {
    const auto hits = std::count_if(best_rank.begin(), best_rank.end(),
                                    [k](std::size_t r) { return r < k; });
    report.per_k[k] = static_cast<double>(hits) / static_cast<double>(n_queries);
  }
  return report;
}

DirectionalView direction_view(const PairedDataset& test, Direction direction) {
  if (test.rows() == 0) {
    throw ArgumentError("test set is empty");
  }
  const bool t2i = direction == Direction::text_to_image;
  const RowMatrixF& query_side = t2i ? test.src : test.tgt;
  const RowMatrixF& gallery_side = t2i ? test.tgt : test.src;
  const auto& query_side_ids = t2i ? test.src_ids : test.tgt_ids;
  const auto& gallery_side_ids = t2i ? test.tgt_ids : test.src_ids;

  // Query side deduplicated for image->text, gallery side for text->image.
  auto collect = [&](const RowMatrixF& side, const std::vector<std::string>& side_ids,
                     bool dedupe, Eigen::MatrixXd& out, std::vector<std::string>& ids,
                     std::vector<std::string>& groups) {
    std::vector<std::size_t> rows;
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < test.rows(); ++i) {
      if (!dedupe || seen.insert(side_ids[i]).second) rows.push_back(i);
    }
    out.resize(static_cast<Eigen::Index>(rows.size()), side.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.row(static_cast<Eigen::Index>(r)) =
          side.row(static_cast<Eigen::Index>(rows[r])).cast<double>();
      ids.push_back(side_ids[rows[r]]);
      groups.push_back(test.groups[rows[r]]);
    }
  };

  DirectionalView view;
  collect(query_side, query_side_ids, !t2i, view.queries, view.query_ids, view.query_groups);
  collect(gallery_side, gallery_side_ids, t2i, view.gallery, view.gallery_ids,
          view.gallery_groups);
  return view;
}

RecallReport evaluate_direction(const PairedDataset& test, const LinearMap& map,
                                Direction direction, std::span<const std::size_t> ks,
                                Similarity similarity) {
  auto view = direction_view(test, direction);
  if (static_cast<std::size_t>(view.gallery.cols()) != map.d_tgt()) {
    throw ArgumentError("map produces " + std::to_string(map.d_tgt()) +
                        "-dim vectors but the gallery is " +
                        std::to_string(view.gallery.cols()) + "-dim");
  }
  const Eigen::MatrixXd mapped = apply_map(map, view.queries);
  const auto index = build_index(view.gallery, std::move(view.gallery_ids),
                                 std::move(view.gallery_groups), similarity);
  return recall_at_k(mapped, view.query_groups, index, ks, direction);
}

RecallReport best_of(std::span<const RecallReport> reports) {
  if (reports.empty()) {
    throw ArgumentError("best_of needs at least one report");
  }
  RecallReport out = reports.front();
  for (const auto& r : reports.subspan(1)) {
    if (r.direction != out.direction || r.n_queries != out.n_queries) {
      throw ArgumentError("best_of over reports of different directions or query sets");
    }
    for (const auto& [k, v] : r.per_k) {
      auto it = out.per_k.find(k);
      if (it == out.per_k.end()) {
        throw ArgumentError("best_of over reports with different k lists");
      }
      it->second = std::max(it->second, v);
    }
  }
  return out;
}

}  // namespace xmodal
