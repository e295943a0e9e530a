#include "xmodal/embstore.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "xmodal/binary_io.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/random.hpp"

namespace xmodal {

namespace {

constexpr std::string_view kEmbMagic = "EMB1";
constexpr std::uint32_t kEmbVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::size_t kReservedBytes = 7;

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(RowMatrixF values, std::vector<std::string> ids)
    : values_(std::move(values)), ids_(std::move(ids)) {
  if (values_.cols() < 1) {
    throw ValidationError("embedding dimension must be >= 1");
  }
  if (ids_.size() != rows()) {
    throw ValidationError("embedding matrix has " + std::to_string(rows()) + " rows but " +
                          std::to_string(ids_.size()) + " ids");
  }
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_.data()[i])) {
      const auto r = static_cast<std::size_t>(i) / dim();
      throw ValidationError("non-finite value in row '" + ids_[r] + "' (row " +
                            std::to_string(r) + ")");
    }
  }
  std::unordered_set<std::string_view> seen;
  seen.reserve(ids_.size());
  for (const auto& id : ids_) {
    if (!seen.insert(id).second) {
      throw ValidationError("duplicate row id '" + id + "'");
    }
  }
}

EmbeddingMatrix EmbeddingMatrix::from_double(const Eigen::MatrixXd& values,
                                             std::vector<std::string> ids) {
  return {values.cast<float>(), std::move(ids)};
}

std::size_t EmbeddingMatrix::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] == id) return i;
  }
  throw LookupError("unknown row id '" + id + "'", id);
}

std::string encode_emb(const EmbeddingMatrix& m) {
  if (m.rows() == 0) {
    throw ValidationError("cannot encode an empty embedding matrix");
  }
  io::ByteWriter w;
  w.put_bytes(kEmbMagic);
  w.put_u32(kEmbVersion);
  w.put_u64(m.rows());
  w.put_u64(m.dim());
  w.put_u8(kDtypeF32);
  w.put_zeros(kReservedBytes);
  const auto& v = m.values();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    w.put_f32(v.data()[i]);
  }
  for (const auto& id : m.ids()) {
    if (id.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ValidationError("row id longer than 65535 bytes: '" + id.substr(0, 32) + "...'");
    }
    w.put_u16(static_cast<std::uint16_t>(id.size()));
    w.put_bytes(id);
  }
  return w.bytes();
}

EmbeddingMatrix decode_emb(std::string_view bytes, const std::string& context) {
  io::ByteReader r(bytes, context);
  if (bytes.size() < kEmbMagic.size() || r.get_bytes(kEmbMagic.size()) != kEmbMagic) {
    throw FormatError(context + ": bad magic (expected \"EMB1\")");
  }
  const auto version = r.get_u32();
  if (version != kEmbVersion) {
    throw FormatError(context + ": unsupported EMB1 version " + std::to_string(version));
  }
  const auto n = r.get_u64();
  const auto d = r.get_u64();
  const auto dtype = r.get_u8();
  if (dtype != kDtypeF32) {
    throw FormatError(context + ": unsupported dtype code " + std::to_string(dtype));
  }
  for (auto c : r.get_bytes(kReservedBytes)) {
    if (c != '\0') throw FormatError(context + ": reserved header bytes are not zero");
  }
  if (n == 0 || d == 0) {
    throw ValidationError(context + ": header declares n=" + std::to_string(n) +
                          ", d=" + std::to_string(d) + " (both must be >= 1)");
  }
  // Each row needs 4*d payload bytes plus at least a 2-byte id length.
  if (d > r.remaining() / 4 || n > r.remaining() / (4 * d + 2)) {
    std::ostringstream msg;
    msg << context << ": header declares " << n << "x" << d << " but only " << r.remaining()
        << " bytes follow";
    throw CorruptionError(msg.str());
  }
  RowMatrixF values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    values.data()[i] = r.get_f32();
  }
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = r.get_u16();
    ids.emplace_back(r.get_bytes(len));
  }
  if (r.remaining() != 0) {
    throw CorruptionError(context + ": " + std::to_string(r.remaining()) +
                          " trailing bytes after id table");
  }
  try {
    return {std::move(values), std::move(ids)};
  } catch (const ValidationError& e) {
    throw ValidationError(context + ": " + e.what());
  }
}

EmbeddingMatrix load_emb(const std::filesystem::path& path) {
  return decode_emb(io::read_file(path), path.string());
}

void save_emb(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_emb(m));
}

NormalizedRows l2_normalize_rows(const EmbeddingMatrix& m) {
  RowMatrixF out = m.values();
  std::size_t zero_rows = 0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).cast<double>().norm();
    if (norm == 0.0) {
      ++zero_rows;
      continue;
    }
    out.row(i) = (out.row(i).cast<double>() / norm).cast<float>();
  }
  return {EmbeddingMatrix(std::move(out), m.ids()), zero_rows};
}

PairManifest parse_manifest(std::string_view text, const std::string& context) {
  PairManifest manifest;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    const auto where = context + ":" + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": invalid JSON: " + e.what());
    }
    PairEntry entry;
    for (auto [key, field] : {std::pair{"src", &entry.src_id}, std::pair{"tgt", &entry.tgt_id},
                              std::pair{"group", &entry.group}}) {
      if (!obj.is_object() || !obj.contains(key) || !obj[key].is_string()) {
        throw FormatError(where + ": missing string key \"" + key + "\"");
      }
      *field = obj[key].get<std::string>();
    }
    if (entry.group.empty()) {
      throw ValidationError(where + ": empty group id");
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

std::string format_manifest(const PairManifest& manifest) {
  std::string out;
  for (const auto& e : manifest.entries) {
    nlohmann::ordered_json obj;
    obj["src"] = e.src_id;
    obj["tgt"] = e.tgt_id;
    obj["group"] = e.group;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

PairManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(io::read_file(path), path.string());
}

void save_manifest(const PairManifest& manifest, const std::filesystem::path& path) {
  io::write_file_atomic(path, format_manifest(manifest));
}

std::vector<std::string> PairedDataset::distinct_groups() const {
  std::vector<std::string> out;
  std::unordered_set<std::string_view> seen;
  for (const auto& g : groups) {
    if (seen.insert(g).second) out.push_back(g);
  }
  return out;
}

PairedDataset PairedDataset::select(std::span<const std::size_t> rows) const {
  PairedDataset out;
  out.src.resize(static_cast<Eigen::Index>(rows.size()), src.cols());
  out.tgt.resize(static_cast<Eigen::Index>(rows.size()), tgt.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    out.src.row(static_cast<Eigen::Index>(i)) = src.row(r);
    out.tgt.row(static_cast<Eigen::Index>(i)) = tgt.row(r);
    out.src_ids.push_back(src_ids[rows[i]]);
    out.tgt_ids.push_back(tgt_ids[rows[i]]);
    out.groups.push_back(groups[rows[i]]);
  }
  return out;
}

PairedDataset align_pairs(const EmbeddingMatrix& src, const EmbeddingMatrix& tgt,
                          const PairManifest& manifest) {
  auto index_by_id = [](const EmbeddingMatrix& m) {
    std::unordered_map<std::string_view, std::size_t> index;
    index.reserve(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) index.emplace(m.ids()[i], i);
    return index;
  };
  const auto src_index = index_by_id(src);
  const auto tgt_index = index_by_id(tgt);

  const auto m = static_cast<Eigen::Index>(manifest.entries.size());
  PairedDataset ds;
  ds.src.resize(m, static_cast<Eigen::Index>(src.dim()));
  ds.tgt.resize(m, static_cast<Eigen::Index>(tgt.dim()));
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& e = manifest.entries[static_cast<std::size_t>(i)];
    const auto s = src_index.find(e.src_id);
    if (s == src_index.end()) {
      throw LookupError("manifest entry " + std::to_string(i) + ": unknown src id '" +
                            e.src_id + "'",
                        e.src_id);
    }
    const auto t = tgt_index.find(e.tgt_id);
    if (t == tgt_index.end()) {
      throw LookupError("manifest entry " + std::to_string(i) + ": unknown tgt id '" +
                            e.tgt_id + "'",
                        e.tgt_id);
    }
    ds.src.row(i) = src.values().row(static_cast<Eigen::Index>(s->second));
    ds.tgt.row(i) = tgt.values().row(static_cast<Eigen::Index>(t->second));
    ds.src_ids.push_back(e.src_id);
    ds.tgt_ids.push_back(e.tgt_id);
    ds.groups.push_back(e.group);
  }
  return ds;
}

DatasetSplit split(const PairedDataset& ds, std::size_t n_test_groups, std::uint64_t seed) {
  auto groups = ds.distinct_groups();
  if (n_test_groups > groups.size()) {
    throw ArgumentError("requested " + std::to_string(n_test_groups) +
                        " test groups but the dataset has only " +
                        std::to_string(groups.size()));
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(groups));
  const std::unordered_set<std::string_view> test_groups(
      groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(n_test_groups));

  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    (test_groups.contains(ds.groups[i]) ? test_rows : train_rows).push_back(i);
  }
  return {ds.select(train_rows), ds.select(test_rows)};
}

}  // namespace xmodal
