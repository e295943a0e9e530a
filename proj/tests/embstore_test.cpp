#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "xmodal/binary_io.hpp"
#include "xmodal/embstore.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/random.hpp"
#include "xmodal/synthetic.hpp"

namespace fs = std::filesystem;
using namespace xmodal;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "xmodal_embstore_test";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::string> make_ids(std::size_t n, const std::string& prefix = "r") {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
  return ids;
}

EmbeddingMatrix random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  return EmbeddingMatrix::from_double(synthetic::gaussian(n, d, rng), make_ids(n));
}

// EMB1 bytes assembled field by field, independent of encode_emb.
std::string hand_built_emb(std::uint64_t n, std::uint64_t d, const std::vector<float>& values,
                           const std::vector<std::string>& ids) {
  io::ByteWriter w;
  w.put_bytes("EMB1");
  w.put_u32(1);
  w.put_u64(n);
  w.put_u64(d);
  w.put_u8(1);
  w.put_zeros(7);
  for (float v : values) w.put_f32(v);
  for (const auto& id : ids) {
    w.put_u16(static_cast<std::uint16_t>(id.size()));
    w.put_bytes(id);
  }
  return w.bytes();
}

PairedDataset grouped_dataset(std::size_t n_groups, std::size_t per_group) {
  synthetic::RotationPairsOptions o;
  o.n_groups = n_groups;
  o.captions_per_group = per_group;
  o.dim = 3;
  o.seed = 5;
  auto pairs = synthetic::rotation_pairs(o);
  return align_pairs(pairs.text, pairs.image, pairs.manifest);
}

}  // namespace

TEST(EmbeddingMatrix, RejectsBrokenInvariants) {
  RowMatrixF v(2, 2);
  v << 1, 2, 3, 4;
  EXPECT_THROW(EmbeddingMatrix(v, {"a"}), ValidationError);
  EXPECT_THROW(EmbeddingMatrix(v, {"a", "a"}), ValidationError);
  v(1, 0) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(EmbeddingMatrix(v, {"a", "b"}), ValidationError);
  EXPECT_THROW(EmbeddingMatrix(RowMatrixF(1, 0), {"a"}), ValidationError);
}

TEST(Emb1, DecodesHandBuiltFile) {
  const auto bytes = hand_built_emb(2, 3, {1, 2, 3, 4, 5, 6}, {"x", "yy"});
  const auto m = decode_emb(bytes);
  ASSERT_EQ(m.rows(), 2u);
  ASSERT_EQ(m.dim(), 3u);
  EXPECT_EQ(m.values()(0, 2), 3.0f);
  EXPECT_EQ(m.values()(1, 0), 4.0f);
  EXPECT_EQ(m.ids(), (std::vector<std::string>{"x", "yy"}));
}

TEST(Emb1, SingleValueFileLayout) {
  RowMatrixF v(1, 1);
  v << 0.5f;
  const auto bytes = encode_emb(EmbeddingMatrix(v, {"only"}));
  // 32-byte header, 4-byte payload, 2 + 4 byte id entry.
  ASSERT_EQ(bytes.size(), 32u + 4u + 6u);
  EXPECT_EQ(bytes.substr(0, 4), "EMB1");
  EXPECT_EQ(bytes, hand_built_emb(1, 1, {0.5f}, {"only"}));
}

TEST(Emb1, FileRoundTripIsByteIdentical) {
  const auto path = temp_path("roundtrip.emb");
  const auto original = hand_built_emb(2, 2, {0.1f, -0.0f, 1e-30f, 3.5f}, {"a", "\xc3\xa9t\xc3\xa9"});
  io::write_file_atomic(path, original);
  const auto loaded = load_emb(path);
  const auto again = temp_path("roundtrip2.emb");
  save_emb(loaded, again);
  EXPECT_EQ(io::read_file(again), original);
}

TEST(Emb1, RandomMatrixRoundTripsExactly) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = random_matrix(10, 8, seed);
    const auto path = temp_path("random.emb");
    save_emb(m, path);
    const auto back = load_emb(path);
    ASSERT_EQ(back.rows(), m.rows());
    for (Eigen::Index i = 0; i < m.values().size(); ++i) {
      // Bitwise equality via integer reinterpretation also covers -0.0.
      ASSERT_EQ(std::bit_cast<std::uint32_t>(back.values().data()[i]),
                std::bit_cast<std::uint32_t>(m.values().data()[i]));
    }
    EXPECT_EQ(back.ids(), m.ids());
  }
}

TEST(Emb1, TruncatedPayloadIsCorruption) {
  const auto bytes = hand_built_emb(2, 3, {1, 2, 3, 4, 5, 6}, {"x", "y"});
  EXPECT_THROW(decode_emb(bytes.substr(0, 32 + 10)), CorruptionError);
  EXPECT_THROW(decode_emb(bytes.substr(0, bytes.size() - 1)), CorruptionError);
  EXPECT_THROW(decode_emb(bytes + "z"), CorruptionError);
  EXPECT_THROW(decode_emb(bytes.substr(0, 20)), CorruptionError);
}

TEST(Emb1, HeaderErrors) {
  auto bytes = hand_built_emb(1, 1, {1}, {"x"});
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_emb(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_emb(bad_version), FormatError);
  auto bad_dtype = bytes;
  bad_dtype[24] = 2;
  EXPECT_THROW(decode_emb(bad_dtype), FormatError);
  auto bad_reserved = bytes;
  bad_reserved[30] = 1;
  EXPECT_THROW(decode_emb(bad_reserved), FormatError);
  EXPECT_THROW(decode_emb(hand_built_emb(0, 1, {}, {})), ValidationError);
  // Declared size far beyond the buffer must not allocate.
  EXPECT_THROW(decode_emb(hand_built_emb(1ull << 60, 1ull << 60, {1}, {"x"})), CorruptionError);
}

TEST(Emb1, NonFiniteAndDuplicateIdsAreValidationErrors) {
  EXPECT_THROW(decode_emb(hand_built_emb(1, 1, {std::numeric_limits<float>::infinity()}, {"x"})),
               ValidationError);
  EXPECT_THROW(decode_emb(hand_built_emb(2, 1, {1, 2}, {"x", "x"})), ValidationError);
}

TEST(Emb1, UnwritablePathIsIoError) {
  const auto m = random_matrix(1, 1, 0);
  try {
    save_emb(m, "/nonexistent-dir/sub/out.emb");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent-dir/sub/out.emb"), std::string::npos);
  }
  EXPECT_THROW(load_emb("/nonexistent-dir/in.emb"), IoError);
}

TEST(Normalize, ThreeFourFive) {
  RowMatrixF v(2, 2);
  v << 3, 4, 0, 0;
  const auto out = l2_normalize_rows(EmbeddingMatrix(v, {"a", "b"}));
  EXPECT_NEAR(out.matrix.values()(0, 0), 0.6f, 1e-7);
  EXPECT_NEAR(out.matrix.values()(0, 1), 0.8f, 1e-7);
  EXPECT_EQ(out.matrix.values()(1, 0), 0.0f);
  EXPECT_EQ(out.matrix.values()(1, 1), 0.0f);
  EXPECT_EQ(out.zero_rows, 1u);
}

TEST(Normalize, UnitNormAndIdempotent) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = random_matrix(16, 1 + seed % 9, seed);
    const auto once = l2_normalize_rows(m);
    const auto twice = l2_normalize_rows(once.matrix);
    EXPECT_EQ(once.zero_rows, 0u);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      EXPECT_NEAR(once.matrix.values().row(static_cast<Eigen::Index>(i)).cast<double>().norm(), 1.0,
                  1e-6);
    }
    EXPECT_LE((once.matrix.values() - twice.matrix.values()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(once.matrix.ids(), m.ids());
  }
}

TEST(Manifest, ParsesJsonLines) {
  const auto m = parse_manifest(
      "{\"src\": \"a\", \"tgt\": \"x\", \"group\": \"g1\"}\n\n"
      "{\"group\": \"g2\", \"tgt\": \"y\", \"src\": \"b\"}\r\n");
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[1].src_id, "b");
  EXPECT_EQ(m.entries[1].tgt_id, "y");
  EXPECT_EQ(m.entries[1].group, "g2");
  EXPECT_EQ(parse_manifest(format_manifest(m)).entries.size(), 2u);
}

TEST(Manifest, RejectsMalformedLines) {
  EXPECT_THROW(parse_manifest("{\"src\": \"a\", \"tgt\": \"x\"}\n"), FormatError);
  EXPECT_THROW(parse_manifest("not json\n"), FormatError);
  EXPECT_THROW(parse_manifest("{\"src\": \"a\", \"tgt\": \"x\", \"group\": 3}\n"), FormatError);
  EXPECT_THROW(parse_manifest("{\"src\": \"a\", \"tgt\": \"x\", \"group\": \"\"}\n"),
               ValidationError);
}

TEST(AlignPairs, FollowsManifestOrder) {
  RowMatrixF s(2, 2);
  s << 1, 2, 3, 4;
  RowMatrixF t(2, 1);
  t << 10, 20;
  const EmbeddingMatrix src(s, {"a", "b"});
  const EmbeddingMatrix tgt(t, {"x", "y"});
  PairManifest manifest{{{"b", "y", "g2"}, {"a", "x", "g1"}}};
  const auto ds = align_pairs(src, tgt, manifest);
  ASSERT_EQ(ds.rows(), 2u);
  EXPECT_EQ(ds.src(0, 0), 3.0f);
  EXPECT_EQ(ds.tgt(0, 0), 20.0f);
  EXPECT_EQ(ds.src(1, 1), 2.0f);
  EXPECT_EQ(ds.groups, (std::vector<std::string>{"g2", "g1"}));
  EXPECT_EQ(ds.src_dim(), 2u);
  EXPECT_EQ(ds.tgt_dim(), 1u);
}

TEST(AlignPairs, UnknownIdNamesTheId) {
  RowMatrixF s(1, 1);
  s << 1;
  const EmbeddingMatrix src(s, {"a"});
  const EmbeddingMatrix tgt(s, {"x"});
  try {
    align_pairs(src, tgt, PairManifest{{{"zzz", "x", "g"}}});
    FAIL() << "expected LookupError";
  } catch (const LookupError& e) {
    EXPECT_EQ(e.key(), "zzz");
    EXPECT_NE(std::string(e.what()).find("zzz"), std::string::npos);
  }
  EXPECT_THROW(align_pairs(src, tgt, PairManifest{{{"a", "nope", "g"}}}), LookupError);
}

TEST(AlignPairs, FiveCaptionsShareOneGroup) {
  const auto ds = grouped_dataset(1, 5);
  ASSERT_EQ(ds.rows(), 5u);
  for (const auto& g : ds.groups) EXPECT_EQ(g, "g0");
  for (const auto& id : ds.tgt_ids) EXPECT_EQ(id, "i0");
  EXPECT_EQ(ds.distinct_groups().size(), 1u);
}

TEST(Split, ZeroTestGroupsKeepsEverything) {
  const auto ds = grouped_dataset(10, 2);
  const auto s = split(ds, 0, 99);
  EXPECT_EQ(s.test.rows(), 0u);
  EXPECT_EQ(s.train.src_ids, ds.src_ids);
  EXPECT_EQ(s.train.groups, ds.groups);
  EXPECT_EQ(s.train.src, ds.src);
}

TEST(Split, DeterministicForSeed) {
  const auto ds = grouped_dataset(10, 3);
  const auto a = split(ds, 4, 7);
  const auto b = split(ds, 4, 7);
  EXPECT_EQ(a.test.src_ids, b.test.src_ids);
  EXPECT_EQ(a.train.src_ids, b.train.src_ids);
}

TEST(Split, GroupCountsAndDisjointness) {
  const auto ds = grouped_dataset(10, 3);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto s = split(ds, 3, seed);
    const auto test_groups = s.test.distinct_groups();
    const auto train_groups = s.train.distinct_groups();
    EXPECT_EQ(test_groups.size(), 3u);
    EXPECT_EQ(train_groups.size(), 7u);
    std::set<std::string> t(test_groups.begin(), test_groups.end());
    for (const auto& g : train_groups) EXPECT_FALSE(t.contains(g));
    EXPECT_EQ(s.train.rows() + s.test.rows(), ds.rows());
  }
}

TEST(Split, TooManyTestGroups) {
  const auto ds = grouped_dataset(4, 1);
  EXPECT_THROW(split(ds, 5, 0), ArgumentError);
  EXPECT_NO_THROW(split(ds, 4, 0));
}
