#include "flowfill/metrics.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <limits>

using namespace flowfill;

namespace {

// Minimum-edit oracle by exhaustive recursion over the three operations.
std::size_t brute_edits(const std::vector<int>& a, std::size_t i, const std::vector<int>& b, std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const std::size_t sub = brute_edits(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  const std::size_t del = brute_edits(a, i + 1, b, j) + 1;
  const std::size_t ins = brute_edits(a, i, b, j + 1) + 1;
  return std::min({sub, del, ins});
}

}  // namespace

TEST(Wer, Examples) {
  EXPECT_DOUBLE_EQ(wer({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(wer({1, 2, 3, 4}, {1, 2, 4}), 0.25);
  EXPECT_DOUBLE_EQ(wer({1, 2}, {3, 4, 5, 6}), 2.0);
  EXPECT_DOUBLE_EQ(wer({1}, {}), 1.0);
  EXPECT_THROW(wer({}, {1}), ContractError);
}

TEST(Wer, MatchesExhaustiveOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<int> a(static_cast<std::size_t>(rng.uniform_int(1, 6))), b(static_cast<std::size_t>(rng.uniform_int(0, 6)));
    for (int& v : a) v = rng.uniform_int(0, 2);
    for (int& v : b) v = rng.uniform_int(0, 2);
    EXPECT_EQ(edit_distance(std::span<const int>(a), std::span<const int>(b)), brute_edits(a, 0, b, 0));
    EXPECT_EQ(edit_distance(std::span<const int>(a), std::span<const int>(b)),
              edit_distance(std::span<const int>(b), std::span<const int>(a)));
  }
}

TEST(Wer, WorksOnWords) {
  const std::vector<std::string> r{"the", "cat", "sat"}, h{"the", "hat", "sat"};
  EXPECT_NEAR(wer(std::span<const std::string>(r), std::span<const std::string>(h)), 1.0 / 3.0, 1e-15);
}

TEST(SpeakerEmbedding, HandExample) {
  Mat x(2, 1);
  x << 1, 3;
  // mean 2, std 1, mean |delta| 2 -> (2, 1, 2) / 3
  const RowVec e = speaker_embedding(x);
  ASSERT_EQ(e.size(), 3);
  EXPECT_NEAR(e(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(e(1), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(e(2), 2.0 / 3.0, 1e-15);
  EXPECT_THROW(speaker_embedding(Mat::Zero(1, 3)), ContractError);
}

TEST(SpeakerEmbedding, UnitNormAndShiftSensitive) {
  Rng rng(2);
  const Mat x = rng.normal_matrix(30, 4);
  EXPECT_NEAR(speaker_embedding(x).norm(), 1.0, 1e-12);
  const Mat shifted = (x.array() + 2.0).matrix();
  EXPECT_LT(sim_o(speaker_embedding(x), speaker_embedding(shifted)), 0.99);
  EXPECT_NEAR(sim_o(speaker_embedding(x), speaker_embedding(3.0 * x)), 1.0, 1e-12);
}

TEST(SimO, CosineProperties) {
  RowVec a(3), b(3);
  a << 1, 0, 0;
  b << 0, 2, 0;
  EXPECT_DOUBLE_EQ(sim_o(a, a), 1.0);
  EXPECT_DOUBLE_EQ(sim_o(a, b), 0.0);
  EXPECT_DOUBLE_EQ(sim_o(a, -a), -1.0);
  EXPECT_THROW(sim_o(a, RowVec::Zero(3)), ContractError);
  EXPECT_THROW(sim_o(a, RowVec::Ones(2)), ContractError);
}

TEST(Wer, DeletionExampleAndRoles) {
  EXPECT_NEAR(wer({0, 1, 2}, {0, 2}), 1.0 / 3.0, 1e-15);
  // Substitutions cost the same either way; insertions vs deletions depend on which side is the reference.
  EXPECT_DOUBLE_EQ(wer({0, 1}, {0, 2}), wer({0, 2}, {0, 1}));
  EXPECT_NE(wer({0, 1, 2}, {0}), wer({0}, {0, 1, 2}));
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    std::vector<int> x(static_cast<std::size_t>(rng.uniform_int(1, 8)));
    for (int& v : x) v = rng.uniform_int(0, 4);
    EXPECT_DOUBLE_EQ(wer(x, x), 0.0);
  }
}

TEST(SpeakerEmbedding, PermutationTouchesOnlyDeltaBlock) {
  Rng rng(4);
  const Mat x = rng.normal_matrix(20, 3);
  Mat p = x;
  for (Eigen::Index i = 0; i < 10; ++i) p.row(i).swap(p.row(19 - i));
  for (Eigen::Index i = 0; i + 1 < 20; i += 2) p.row(i).swap(p.row(i + 1));
  // Mean and std statistics ignore frame order; the delta block does not.
  auto raw = [](const Mat& m) {
    const double n = static_cast<double>(m.rows());
    RowVec mean = m.colwise().mean();
    RowVec sd = ((m.rowwise() - mean).array().square().colwise().sum() / n).sqrt().matrix();
    return std::pair{mean, sd};
  };
  const auto [mx, sx] = raw(x);
  const auto [mp, sp] = raw(p);
  EXPECT_TRUE(mx.isApprox(mp, 1e-12));
  EXPECT_TRUE(sx.isApprox(sp, 1e-12));
  const RowVec ex = speaker_embedding(x), ep = speaker_embedding(p);
  EXPECT_FALSE(ex.tail(3).isApprox(ep.tail(3), 1e-6));
}

TEST(SpeakerEmbedding, ConstantFramesHaveZeroDelta) {
  const Mat x = Mat::Constant(5, 2, 0.7);
  const RowVec e = speaker_embedding(x);
  EXPECT_TRUE(e.tail(2).isZero(0.0));
  EXPECT_TRUE(e.segment(2, 2).isZero(1e-15));
  EXPECT_EQ(speaker_embedding(x), speaker_embedding(x));
}

TEST(SimO, ScaleInvariant) {
  Rng rng(5);
  const RowVec e = rng.normal_matrix(1, 6);
  for (double c : {1e-3, 0.5, 7.0, 1e4}) EXPECT_NEAR(sim_o(e, c * e), 1.0, 1e-12);
}
