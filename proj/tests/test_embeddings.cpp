#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "belgraph/embeddings.hpp"
#include "test_util.hpp"

using namespace belgraph;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("belgraph_" + name)).string();
}

}  // namespace

TEST(EmbeddingTableFile, ZeroPairVectorRoundTrip) {
  EmbeddingTable t(8);
  t.insert(EmbeddingKey::pair(0, 1), Vec::Zero(8));
  const auto path = temp_path("zero.bgt");
  write_table(t, path);
  const auto loaded = load_table(path);
  EXPECT_EQ(loaded.dim(), 8);
  EXPECT_TRUE(loaded.at(EmbeddingKey::pair(0, 1)).isZero(0.0));
  std::remove(path.c_str());
}

TEST(EmbeddingTableFile, HeaderLayoutIsBitExact) {
  EmbeddingTable t(2);
  t.insert(EmbeddingKey::pair(0, 1), std::vector<float>{1.0f, -2.0f});
  const auto bytes = serialize_table(t);
  ASSERT_EQ(bytes.size(), 4u + 2 + 4 + 8 + (1 + 4 + 2 + 2 + 2) + 2 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "BGT1");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 2);  // dim
  EXPECT_EQ(bytes[10], 1);  // record count
  EXPECT_EQ(static_cast<unsigned char>(bytes[18]), 2);  // kind PAIR
  for (int b = 19; b < 23; ++b) EXPECT_EQ(static_cast<unsigned char>(bytes[b]), 0xFF);
  // 1.0f = 0x3F800000 little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[29]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(bytes[32]), 0x3F);
}

TEST(EmbeddingTableFile, SynthRoundTripIsByteIdentical) {
  const auto cfg = testutil::small_config(4, 3, 6, 16, 8);
  const auto vocab = Vocabulary::numbered(3, 6);
  const auto t = synth_table(cfg, vocab, 7);
  const auto bytes = serialize_table(t);
  const auto back = parse_table(bytes);
  EXPECT_EQ(back, t);
  EXPECT_EQ(serialize_table(back), bytes);
  EXPECT_NO_THROW(back.validate(cfg, vocab));
}

TEST(EmbeddingTableFile, TruncatedFileIsFormatError) {
  const auto cfg = testutil::small_config(2, 1, 2, 4, 2);
  const auto bytes = serialize_table(synth_table(cfg, Vocabulary::numbered(1, 2), 1));
  for (std::size_t cut : {bytes.size() - 1, bytes.size() - 7, std::size_t{30}, std::size_t{10}})
    EXPECT_THROW(parse_table(bytes.substr(0, cut)), FormatError) << "cut at " << cut;
}

TEST(EmbeddingTableFile, BadMagicVersionAndDuplicates) {
  EmbeddingTable t(2);
  t.insert(EmbeddingKey::pair(0, 1), std::vector<float>{1.0f, 2.0f});
  auto bytes = serialize_table(t);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(parse_table(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(parse_table(bad), FormatError);
  // Duplicate the single record and bump the count.
  auto dup = bytes + bytes.substr(18);
  dup[10] = 2;
  EXPECT_THROW(parse_table(dup), FormatError);
}

TEST(EmbeddingTable, CompletenessListsAtMostTenKeys) {
  const auto cfg = testutil::small_config(3, 2, 3, 4, 2);
  EmbeddingTable t(4);
  try {
    t.validate(cfg, Vocabulary::numbered(2, 3));
    FAIL();
  } catch (const CompletenessError& e) {
    const std::string full = e.what();
    EXPECT_EQ(full.substr(0, 3), "51 ");  // 12 + 3 + 18 + 18 keys, all missing
    const std::string msg = full.substr(full.find(':'));
    std::size_t count = 0;
    for (std::size_t p = msg.find('('); p != std::string::npos; p = msg.find('(', p + 1)) ++count;
    EXPECT_EQ(count, 10u);
  }
}

TEST(EmbeddingTable, DimensionMismatch) {
  const auto cfg = testutil::small_config(2, 1, 2, 4, 2);
  EmbeddingTable t(5);
  EXPECT_THROW(t.validate(cfg, Vocabulary::numbered(1, 2)), DimensionError);
  EXPECT_THROW(t.insert(EmbeddingKey::pair(0, 1), Vec::Zero(4)), DimensionError);
}

TEST(SynthTable, DeterministicAndSeedSensitive) {
  const auto cfg = testutil::small_config(3, 2, 3, 8, 4);
  const auto vocab = Vocabulary::numbered(2, 3);
  EXPECT_EQ(synth_table(cfg, vocab, 1), synth_table(cfg, vocab, 1));
  const auto a = synth_table(cfg, vocab, 1), b = synth_table(cfg, vocab, 2);
  bool differs = false;
  for (const auto& [k, v] : a.entries()) differs |= (v != b.entries().at(k));
  EXPECT_TRUE(differs);
}

TEST(SynthTable, UnitNorm) {
  const auto cfg = testutil::small_config(4, 2, 5, 16, 4);
  const auto t = synth_table(cfg, Vocabulary::numbered(3, 5), 9);
  for (const auto& [k, v] : t.entries()) EXPECT_NEAR(t.at(k).norm(), 1.0, 1e-6);
}

TEST(MixHistory, EndpointsAndMidpoint) {
  Vec y(2), n(2);
  y << 2, 0;
  n << 0, 2;
  EXPECT_EQ(mix_history(y, n, 1.0), y);
  EXPECT_EQ(mix_history(y, n, 0.0), n);
  EXPECT_TRUE(mix_history(y, n, 0.5).isApprox(Vec::Ones(2)));
  EXPECT_THROW(mix_history(y, Vec::Zero(3), 0.5), DimensionError);
}

TEST(MixHistory, AffineInPrevious) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec y = Vec::Random(6), n = Vec::Random(6);
    const double p1 = U(rng), p2 = U(rng), a = U(rng);
    const Vec lhs = mix_history(y, n, a * p1 + (1 - a) * p2);
    const Vec rhs = a * mix_history(y, n, p1) + (1 - a) * mix_history(y, n, p2);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
    // derivative in p is h_yes - h_no
    const double h = 1e-6;
    const Vec fd = (mix_history(y, n, 0.5 + h) - mix_history(y, n, 0.5 - h)) / (2 * h);
    EXPECT_LT((fd - (y - n)).cwiseAbs().maxCoeff(), 1e-8);
  }
}
