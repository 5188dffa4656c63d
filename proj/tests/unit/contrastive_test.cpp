#include "mvcl/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "gradcheck.hpp"
#include "loss_oracle.hpp"
#include "test_util.hpp"

namespace mvcl {
namespace {

using testing::normalize;
using testing::oracle_batch;
using testing::oracle_pair;
using testing::random_batch;

// Applies a product of random plane rotations to every vector.
ProjectionBatch rotate_all(ProjectionBatch b, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> angle(0.0, 6.283185307179586);
  for (int r = 0; r < 20; ++r) {
    const std::size_t p = rng() % b.dim;
    std::size_t q = rng() % b.dim;
    if (q == p) q = (p + 1) % b.dim;
    const Real t = angle(rng), c = std::cos(t), s = std::sin(t);
    for (std::size_t v = 0; v < b.views; ++v) {
      for (std::size_t i = 0; i < b.lesions; ++i) {
        auto z = b.at(v, i);
        const Real zp = z[p], zq = z[q];
        z[p] = c * zp - s * zq;
        z[q] = s * zp + c * zq;
      }
    }
  }
  return b;
}

// ---- cosine_sim -----------------------------------------------------------

TEST(CosineSim, Examples) {
  const std::vector<Real> e0{1.0, 0.0}, e1{0.0, 1.0};
  const Real r = 1.0 / std::sqrt(2.0);
  const std::vector<Real> diag{r, r};
  EXPECT_EQ(cosine_sim(e0, e0), 1.0);
  EXPECT_EQ(cosine_sim(e0, e1), 0.0);
  EXPECT_NEAR(cosine_sim(diag, e0), 0.70710678, 1e-8);
  const std::vector<Real> scaled{3.0, 0.0};
  EXPECT_EQ(cosine_sim(scaled, e0), 1.0);
}

TEST(CosineSim, ZeroVectorIsUndefined) {
  const std::vector<Real> zero{0.0, 0.0}, e0{1.0, 0.0};
  EXPECT_MVCL_ERROR(cosine_sim(zero, e0), ErrorCode::kUndefinedSimilarity);
  EXPECT_MVCL_ERROR(cosine_sim(e0, zero), ErrorCode::kUndefinedSimilarity);
}

// ---- ProjectionBatch ------------------------------------------------------

TEST(ProjectionBatch, Validation) {
  auto b = random_batch(2, 3, 4, 0.07, 1);
  b.validate();
  EXPECT_EQ(b.tau, 0.07);
  b.z[0] *= 1.01;
  EXPECT_MVCL_ERROR(b.validate(), ErrorCode::kInvalidArgument);
  EXPECT_MVCL_ERROR(random_batch(1, 3, 4, 0.07, 1).validate(), ErrorCode::kInsufficientViews);
  EXPECT_MVCL_ERROR(random_batch(2, 3, 4, 0.0, 1).validate(), ErrorCode::kInvalidArgument);
  auto nan = random_batch(2, 3, 4, 0.07, 1);
  nan.z[5] = std::nan("");
  EXPECT_MVCL_ERROR(nan.validate(), ErrorCode::kNumeric);
}

TEST(LossMode, StringRoundTrip) {
  for (auto mode : {LossMode::kCmcInclusive, LossMode::kAsWritten}) {
    EXPECT_EQ(loss_mode_from_string(to_string(mode)), mode);
  }
  EXPECT_MVCL_ERROR(loss_mode_from_string("infonce"), ErrorCode::kConfiguration);
}

// ---- pair_loss ------------------------------------------------------------

TEST(PairLoss, SingleLesion) {
  const auto b = random_batch(2, 1, 4, 0.07, 2);
  EXPECT_EQ(pair_loss(b, 0, 1, 0, LossMode::kCmcInclusive), 0.0);
  EXPECT_MVCL_ERROR(pair_loss(b, 0, 1, 0, LossMode::kAsWritten), ErrorCode::kNoNegatives);
  EXPECT_MVCL_ERROR(batch_loss(b, LossMode::kAsWritten), ErrorCode::kNoNegatives);
}

TEST(PairLoss, MatchesOracle) {
  const auto b = random_batch(2, 3, 4, 1.0, 3);
  for (auto mode : {LossMode::kCmcInclusive, LossMode::kAsWritten}) {
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(pair_loss(b, 0, 1, i, mode), oracle_pair(b, 0, 1, i, mode), 1e-9);
      EXPECT_NEAR(pair_loss(b, 1, 0, i, mode), oracle_pair(b, 1, 0, i, mode), 1e-9);
    }
  }
}

TEST(PairLoss, Preconditions) {
  const auto b = random_batch(2, 3, 4, 1.0, 3);
  EXPECT_MVCL_ERROR(pair_loss(b, 1, 1, 0), ErrorCode::kInvalidArgument);
  EXPECT_MVCL_ERROR(pair_loss(b, 0, 1, 3), ErrorCode::kRange);
  EXPECT_MVCL_ERROR(pair_loss(b, 0, 2, 0), ErrorCode::kRange);
}

TEST(PairLoss, StrictlyDecreasesAsPositiveAligns) {
  for (auto mode : {LossMode::kCmcInclusive, LossMode::kAsWritten}) {
    auto b = random_batch(2, 4, 6, 0.5, 4);
    const std::size_t i = 2;
    const std::vector<Real> anchor(b.at(0, i).begin(), b.at(0, i).end());
    const std::vector<Real> start(b.at(1, i).begin(), b.at(1, i).end());
    Real previous_sim = cosine_sim(b.at(0, i), b.at(1, i));
    Real previous = pair_loss(b, 0, 1, i, mode);
    // Only z[1][i] moves, so only the positive similarity of this term changes.
    for (int step = 1; step <= 10; ++step) {
      const Real t = step / 10.0;
      auto z = b.at(1, i);
      for (std::size_t d = 0; d < z.size(); ++d) z[d] = (1.0 - t) * start[d] + t * anchor[d];
      normalize(z);
      const Real sim = cosine_sim(b.at(0, i), b.at(1, i));
      const Real loss = pair_loss(b, 0, 1, i, mode);
      ASSERT_GT(sim, previous_sim);
      EXPECT_LT(loss, previous) << to_string(mode) << " t=" << t;
      previous_sim = sim;
      previous = loss;
    }
  }
}

// ---- two_view_lesion_loss -------------------------------------------------

TEST(TwoViewLesionLoss, IdenticalViewsGiveEqualDirections) {
  auto b = random_batch(2, 4, 5, 0.07, 5);
  std::copy(b.z.begin(), b.z.begin() + 20, b.z.begin() + 20);
  for (std::size_t i = 0; i < 4; ++i) {
    const Real forward = pair_loss(b, 0, 1, i), backward = pair_loss(b, 1, 0, i);
    EXPECT_EQ(forward, backward);
    EXPECT_EQ(two_view_lesion_loss(b, i), 2.0 * forward);
  }
}

TEST(TwoViewLesionLoss, MatchesOracleAndIsSymmetric) {
  const auto b = random_batch(2, 2, 8, 0.07, 6);
  auto swapped = b;
  std::swap_ranges(swapped.z.begin(), swapped.z.begin() + 16, swapped.z.begin() + 16);
  for (auto mode : {LossMode::kCmcInclusive, LossMode::kAsWritten}) {
    for (std::size_t i = 0; i < 2; ++i) {
      const Real value = two_view_lesion_loss(b, i, mode);
      EXPECT_NEAR(value, oracle_pair(b, 0, 1, i, mode) + oracle_pair(b, 1, 0, i, mode), 1e-9);
      EXPECT_NEAR(two_view_lesion_loss(swapped, i, mode), value, 1e-12);
    }
  }
}

TEST(TwoViewLesionLoss, WrongArity) {
  EXPECT_MVCL_ERROR(two_view_lesion_loss(random_batch(3, 2, 4, 1.0, 7), 0), ErrorCode::kWrongArity);
}

// ---- anchor_loss ----------------------------------------------------------

TEST(AnchorLoss, TwoViewsIsTheSinglePairLoss) {
  const auto b = random_batch(2, 3, 4, 0.3, 8);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(anchor_loss(b, 0, i), pair_loss(b, 0, 1, i));
    EXPECT_EQ(anchor_loss(b, 1, i), pair_loss(b, 1, 0, i));
  }
}

TEST(AnchorLoss, ThreeViewsMatchesOracle) {
  const auto b = random_batch(3, 4, 5, 0.2, 9);
  for (std::size_t m = 0; m < 3; ++m) {
    for (std::size_t i = 0; i < 4; ++i) {
      Real expected = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        if (j != m) expected += oracle_pair(b, m, j, i, LossMode::kCmcInclusive);
      }
      EXPECT_NEAR(anchor_loss(b, m, i), expected, 1e-9);
    }
  }
}

TEST(AnchorLoss, InvariantToRelabelingOtherViews) {
  const auto b = random_batch(4, 3, 5, 0.2, 10);
  const std::size_t block = 3 * 5;
  std::vector<std::size_t> order{1, 2, 3};
  do {
    auto relabeled = b;
    for (std::size_t v = 0; v < 3; ++v) {
      std::copy_n(b.z.begin() + static_cast<long>(order[v] * block), block,
                  relabeled.z.begin() + static_cast<long>((v + 1) * block));
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(anchor_loss(relabeled, 0, i), anchor_loss(b, 0, i), 1e-12);
  } while (std::next_permutation(order.begin(), order.end()));
}

// ---- batch_loss -----------------------------------------------------------

TEST(BatchLoss, TwoViewsIsTheAverageLesionLoss) {
  const auto b = random_batch(2, 5, 6, 0.07, 11);
  Real sum = 0.0;
  for (std::size_t i = 0; i < 5; ++i) sum += two_view_lesion_loss(b, i);
  EXPECT_NEAR(batch_loss(b).value, sum / 10.0, 1e-12);
}

TEST(BatchLoss, PairSumsAreDiagnostics) {
  const auto b = random_batch(3, 4, 5, 0.5, 12);
  const auto result = batch_loss(b);
  ASSERT_EQ(result.pair_sums.size(), 9U);
  Real total = 0.0;
  for (std::size_t m = 0; m < 3; ++m) {
    for (std::size_t j = 0; j < 3; ++j) {
      Real expected = 0.0;
      if (j != m) {
        for (std::size_t i = 0; i < 4; ++i) expected += oracle_pair(b, m, j, i, LossMode::kCmcInclusive);
      }
      EXPECT_NEAR(result.pair_sums[m * 3 + j], expected, 1e-9);
      total += result.pair_sums[m * 3 + j];
    }
  }
  EXPECT_NEAR(result.value, total / 8.0, 1e-12);
  EXPECT_TRUE(result.grad.empty());
}

TEST(BatchLoss, LesionPermutationInvariance) {
  const auto b = random_batch(3, 5, 4, 0.07, 13);
  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  auto permuted = b;
  for (std::size_t v = 0; v < 3; ++v) {
    for (std::size_t i = 0; i < 5; ++i) {
      std::copy(b.at(v, perm[i]).begin(), b.at(v, perm[i]).end(), permuted.at(v, i).begin());
    }
  }
  for (auto mode : {LossMode::kCmcInclusive, LossMode::kAsWritten}) {
    EXPECT_NEAR(batch_loss(permuted, mode).value, batch_loss(b, mode).value, 1e-12);
  }
}

TEST(BatchLoss, SeededFourLesionsThreeViewsMatchesOracle) {
  const auto b = random_batch(3, 4, 128, 0.07, 14);
  for (auto mode : {LossMode::kCmcInclusive, LossMode::kAsWritten}) {
    EXPECT_NEAR(batch_loss(b, mode).value, oracle_batch(b, mode), 1e-9);
  }
}

TEST(BatchLoss, RandomizedSuiteMatchesOracle) {
  std::mt19937_64 shape_rng(2024);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t m = 2 + shape_rng() % 3;  // 2..4
    const std::size_t n = 1 + shape_rng() % 5;  // 1..5
    const std::size_t d = 2 + shape_rng() % 8;
    const Real tau = std::array<Real, 3>{0.07, 0.5, 1.0}[shape_rng() % 3];
    const auto b = random_batch(m, n, d, tau, 1000 + seed);
    EXPECT_NEAR(batch_loss(b, LossMode::kCmcInclusive).value, oracle_batch(b, LossMode::kCmcInclusive), 1e-9)
        << "seed " << seed;
    if (n >= 2) {
      EXPECT_NEAR(batch_loss(b, LossMode::kAsWritten).value, oracle_batch(b, LossMode::kAsWritten), 1e-9)
          << "seed " << seed;
    }
  }
}

TEST(BatchLoss, InclusiveModeIsNonNegative) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    EXPECT_GE(batch_loss(random_batch(2 + seed % 3, 1 + seed % 6, 3, 0.07, 3000 + seed)).value, 0.0);
  }
  // Perfect alignment with one lesion still gives exactly zero.
  auto b = random_batch(3, 1, 4, 0.07, 15);
  std::copy_n(b.z.begin(), 4, b.z.begin() + 4);
  std::copy_n(b.z.begin(), 4, b.z.begin() + 8);
  EXPECT_EQ(batch_loss(b).value, 0.0);
}

TEST(BatchLoss, AsWrittenCanBeNegative) {
  // Positives aligned and negatives antipodal push the ratio above one.
  ProjectionBatch b(2, 2, 1, 0.5);
  b.z = {1.0, -1.0, 1.0, -1.0};
  EXPECT_LT(batch_loss(b, LossMode::kAsWritten).value, 0.0);
  EXPECT_GT(batch_loss(b, LossMode::kCmcInclusive).value, 0.0);
}

TEST(BatchLoss, InvariantUnderCommonOrthogonalTransform) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto b = random_batch(3, 4, 6, 0.07, 4000 + seed);
    const auto r = rotate_all(b, 5000 + seed);
    for (auto mode : {LossMode::kCmcInclusive, LossMode::kAsWritten}) {
      EXPECT_NEAR(batch_loss(r, mode).value, batch_loss(b, mode).value, 1e-10);
    }
  }
}

TEST(BatchLoss, StableAtSmallTemperature) {
  auto b = random_batch(2, 3, 4, 0.001, 16);
  const Real value = batch_loss(b).value;
  EXPECT_TRUE(std::isfinite(value));
  EXPECT_GE(value, 0.0);
}

// ---- batch_loss_backward --------------------------------------------------

// The oracle works with cosine similarities, so its gradient is the
// tangential part of the dot-product gradient returned by the implementation.
std::vector<Real> oracle_gradient(ProjectionBatch b, LossMode mode) {
  return testing::numeric_grad(b.z, [&] { return oracle_batch(b, mode); }, 1e-6);
}

std::vector<Real> tangential(const ProjectionBatch& b, std::vector<Real> grad) {
  for (std::size_t m = 0; m < b.views; ++m) {
    for (std::size_t i = 0; i < b.lesions; ++i) {
      const auto z = b.at(m, i);
      Real* g = grad.data() + (m * b.lesions + i) * b.dim;
      Real radial = 0.0;
      for (std::size_t c = 0; c < b.dim; ++c) radial += g[c] * z[c];
      for (std::size_t c = 0; c < b.dim; ++c) g[c] -= radial * z[c];
    }
  }
  return grad;
}

TEST(BatchLossBackward, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto b = random_batch(3, 3, 5, 0.5, 6000 + seed);
    for (auto mode : {LossMode::kCmcInclusive, LossMode::kAsWritten}) {
      const auto result = batch_loss_backward(b, mode);
      EXPECT_NEAR(result.value, batch_loss(b, mode).value, 0.0);
      auto copy = b;
      const auto numeric = testing::numeric_grad(copy.z, [&] { return batch_loss(copy, mode).value; }, 1e-6);
      EXPECT_LT(testing::relative_error(result.grad, numeric), 1e-6) << to_string(mode) << " seed " << seed;
    }
  }
}

TEST(BatchLossBackward, TemperatureScalingAgainstOracle) {
  const auto b = random_batch(3, 3, 5, 0.4, 17);
  auto half = b;
  half.tau = 0.2;
  const auto g = tangential(b, batch_loss_backward(b).grad);
  const auto g_half = tangential(half, batch_loss_backward(half).grad);
  EXPECT_LT(testing::relative_error(g, oracle_gradient(b, LossMode::kCmcInclusive)), 1e-6);
  EXPECT_LT(testing::relative_error(g_half, oracle_gradient(half, LossMode::kCmcInclusive)), 1e-6);
  // Halving tau doubles the logits, so the gradients must differ.
  EXPECT_GT(testing::relative_error(g, g_half), 1e-3);
}

TEST(BatchLossBackward, TangentialGradientVanishesAtSymmetricOptimum) {
  // Lesion vectors form a regular simplex (all cross-lesion similarities
  // equal) and every view of a lesion coincides (positives maximal).
  const std::size_t n = 4, d = 4, views = 3;
  ProjectionBatch b(views, n, d, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Real> v(d, -1.0 / static_cast<Real>(n));
    v[i] += 1.0;
    normalize(v);
    for (std::size_t m = 0; m < views; ++m) std::copy(v.begin(), v.end(), b.at(m, i).begin());
  }
  b = rotate_all(b, 18);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = i + 1; k < n; ++k) {
      EXPECT_NEAR(cosine_sim(b.at(0, i), b.at(1, k)), -1.0 / 3.0, 1e-12);
    }
  }
  for (auto mode : {LossMode::kCmcInclusive, LossMode::kAsWritten}) {
    const auto grad = batch_loss_backward(b, mode).grad;
    Real largest = 0.0;
    for (std::size_t m = 0; m < views; ++m) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto z = b.at(m, i);
        const Real* g = grad.data() + (m * n + i) * d;
        Real radial = 0.0;
        for (std::size_t c = 0; c < d; ++c) radial += g[c] * z[c];
        for (std::size_t c = 0; c < d; ++c) {
          const Real tangential = g[c] - radial * z[c];
          EXPECT_NEAR(tangential, 0.0, 1e-10) << to_string(mode);
          largest = std::max(largest, std::abs(g[c]));
        }
      }
    }
    EXPECT_GT(largest, 1e-3);  // the gradient itself is not zero, only its tangential part
  }
}

// ---- diagnostics ----------------------------------------------------------

TEST(Diagnostics, JsonRow) {
  const auto row = loss_diagnostics_row(3, 120, 1.25, LossMode::kAsWritten, 0.07);
  EXPECT_EQ(row.at("epoch"), 3);
  EXPECT_EQ(row.at("step"), 120);
  EXPECT_EQ(row.at("loss"), 1.25);
  EXPECT_EQ(row.at("mode"), "as-written");
  EXPECT_EQ(row.at("tau"), 0.07);
  EXPECT_EQ(row.size(), 5U);
}

}  // namespace
}  // namespace mvcl
