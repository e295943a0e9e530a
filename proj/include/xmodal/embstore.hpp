#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace xmodal {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// n x d embedding vectors (32-bit storage, row-major) with one unique string
// id per row. Immutable after construction. Values are finite, ids unique,
// d >= 1. A matrix read from or written to disk additionally has n >= 1;
// an in-memory matrix may be empty (n == 0) as the result of filtering.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix(RowMatrixF values, std::vector<std::string> ids);

  // Converts from 64-bit computation precision.
  static EmbeddingMatrix from_double(const Eigen::MatrixXd& values, std::vector<std::string> ids);

  std::size_t rows() const noexcept { return static_cast<std::size_t>(values_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(values_.cols()); }
  const RowMatrixF& values() const noexcept { return values_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::span<const float> row(std::size_t i) const {
    return {values_.data() + i * dim(), dim()};
  }

  Eigen::MatrixXd to_double() const { return values_.cast<double>(); }

  // Row position of `id`; throws LookupError naming the id.
  std::size_t index_of(const std::string& id) const;

  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    return a.ids_ == b.ids_ && a.values_.rows() == b.values_.rows() &&
           a.values_.cols() == b.values_.cols() && a.values_ == b.values_;
  }

 private:
  RowMatrixF values_;
  std::vector<std::string> ids_;
};

// EMB1 codec. Layout (little-endian): "EMB1", u32 version = 1, u64 n, u64 d,
// u8 dtype = 1 (float32), 7 zero bytes, n*d float32 row-major, then per row a
// u16 byte length followed by the UTF-8 id.
std::string encode_emb(const EmbeddingMatrix& m);
EmbeddingMatrix decode_emb(std::string_view bytes, const std::string& context = "EMB1");

EmbeddingMatrix load_emb(const std::filesystem::path& path);
void save_emb(const EmbeddingMatrix& m, const std::filesystem::path& path);

struct NormalizedRows {
  EmbeddingMatrix matrix;
  std::size_t zero_rows = 0;  // rows left as zero because they had no direction
};

// Scales every nonzero row to unit Euclidean norm (computed in 64-bit).
NormalizedRows l2_normalize_rows(const EmbeddingMatrix& m);

struct PairEntry {
  std::string src_id;
  std::string tgt_id;
  std::string group;
};

// Source/target row correspondence. Entries sharing a group describe one
// semantic unit, e.g. an image (one tgt id) and its captions (several src ids).
struct PairManifest {
  std::vector<PairEntry> entries;
};

// JSON-lines sidecar: one {"src": ..., "tgt": ..., "group": ...} per line.
PairManifest parse_manifest(std::string_view text, const std::string& context = "manifest");
std::string format_manifest(const PairManifest& manifest);
PairManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const PairManifest& manifest, const std::filesystem::path& path);

// Row i of src corresponds to row i of tgt. A row's id may repeat on one side
// (an image appears once per caption), so ids are kept as plain lists rather
// than as an EmbeddingMatrix.
struct PairedDataset {
  RowMatrixF src;
  RowMatrixF tgt;
  std::vector<std::string> src_ids;
  std::vector<std::string> tgt_ids;
  std::vector<std::string> groups;

  std::size_t rows() const noexcept { return groups.size(); }
  std::size_t src_dim() const noexcept { return static_cast<std::size_t>(src.cols()); }
  std::size_t tgt_dim() const noexcept { return static_cast<std::size_t>(tgt.cols()); }

  // Distinct groups in order of first appearance.
  std::vector<std::string> distinct_groups() const;

  // Sub-dataset of the given row positions, in the given order.
  PairedDataset select(std::span<const std::size_t> rows) const;
};

PairedDataset align_pairs(const EmbeddingMatrix& src, const EmbeddingMatrix& tgt,
                          const PairManifest& manifest);

struct DatasetSplit {
  PairedDataset train;
  PairedDataset test;
};

// Group-wise split: `n_test_groups` groups drawn by a seeded shuffle go to
// test, the rest to train. Both parts keep the original row order.
DatasetSplit split(const PairedDataset& ds, std::size_t n_test_groups, std::uint64_t seed);

}  // namespace xmodal
