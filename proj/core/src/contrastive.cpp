#include "mvcl/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mvcl/errors.hpp"

namespace mvcl {

namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

Real dot(std::span<const Real> a, std::span<const Real> b) {
  Real s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) s += a[d] * b[d];
  return s;
}

// Row i of a logits matrix -> (loss term, log-sum-exp) for the given mode.
Real row_loss(const Real* logits, std::size_t n, std::size_t i, LossMode mode, Real* lse_out) {
  Real mx = -std::numeric_limits<Real>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    if (mode == LossMode::kAsWritten && k == i) continue;
    mx = std::max(mx, logits[k]);
  }
  Real sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (mode == LossMode::kAsWritten && k == i) continue;
    sum += std::exp(logits[k] - mx);
  }
  const Real lse = mx + std::log(sum);
  if (lse_out) *lse_out = lse;
  return lse - logits[i];
}

void check_pair(const ProjectionBatch& batch, std::size_t m, std::size_t j, std::size_t i, LossMode mode) {
  if (m >= batch.views || j >= batch.views || i >= batch.lesions) fail(ErrorCode::kRange, "view or lesion index out of range");
  if (m == j) fail(ErrorCode::kInvalidArgument, "anchor and target view must differ");
  if (mode == LossMode::kAsWritten && batch.lesions < 2) {
    fail(ErrorCode::kNoNegatives, "negatives-only denominator is empty for a single lesion");
  }
}

LossResult evaluate(const ProjectionBatch& batch, LossMode mode, bool want_grad) {
  batch.validate();
  const std::size_t M = batch.views, N = batch.lesions, D = batch.dim;
  if (mode == LossMode::kAsWritten && N < 2) {
    fail(ErrorCode::kNoNegatives, "negatives-only denominator is empty for a single lesion");
  }
  const Real inv_tau = 1.0 / batch.tau;
  const Real scale = 1.0 / (2.0 * static_cast<Real>(N));

  LossResult result;
  result.pair_sums.assign(M * M, 0.0);
  if (want_grad) result.grad.assign(batch.z.size(), 0.0);

  RowMatrix logits(N, N);
  RowMatrix coeff(N, N);
  Real total = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    ConstMatrixMap zm(batch.z.data() + m * N * D, N, D);
    for (std::size_t j = 0; j < M; ++j) {
      if (j == m) continue;
      ConstMatrixMap zj(batch.z.data() + j * N * D, N, D);
      logits.noalias() = (zm * zj.transpose()) * inv_tau;
      Real pair_sum = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        Real lse = 0.0;
        const Real* row = logits.data() + i * N;
        pair_sum += row_loss(row, N, i, mode, &lse);
        if (!want_grad) continue;
        for (std::size_t k = 0; k < N; ++k) {
          const bool excluded = mode == LossMode::kAsWritten && k == i;
          const Real p = excluded ? 0.0 : std::exp(row[k] - lse);
          coeff(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
              scale * inv_tau * (p - (k == i ? 1.0 : 0.0));
        }
      }
      result.pair_sums[m * M + j] = pair_sum;
      total += pair_sum;
      if (want_grad) {
        MatrixMap gm(result.grad.data() + m * N * D, N, D);
        MatrixMap gj(result.grad.data() + j * N * D, N, D);
        gm.noalias() += coeff * zj;
        gj.noalias() += coeff.transpose() * zm;
      }
    }
  }
  result.value = scale * total;
  if (!std::isfinite(result.value)) fail(ErrorCode::kNumeric, "contrastive loss is not finite");
  return result;
}

}  // namespace

std::string to_string(LossMode mode) { return mode == LossMode::kCmcInclusive ? "cmc" : "as-written"; }

LossMode loss_mode_from_string(const std::string& text) {
  if (text == "cmc" || text == "cmc_inclusive") return LossMode::kCmcInclusive;
  if (text == "as-written" || text == "as_written") return LossMode::kAsWritten;
  fail(ErrorCode::kConfiguration, "unknown loss mode '" + text + "' (expected cmc or as-written)");
}

ProjectionBatch::ProjectionBatch(std::size_t m, std::size_t n, std::size_t d, Real temperature)
    : views(m), lesions(n), dim(d), z(m * n * d, 0.0), tau(temperature) {
  for (std::size_t i = 0; i < n; ++i) lesion_ids.push_back(std::to_string(i));
}

void ProjectionBatch::validate(Real tolerance) const {
  if (views < 2) fail(ErrorCode::kInsufficientViews, "projection batch needs at least two views");
  if (lesions < 1 || dim < 1) fail(ErrorCode::kEmptyData, "projection batch is empty");
  if (!(tau > 0.0)) fail(ErrorCode::kInvalidArgument, "temperature must be positive");
  if (z.size() != views * lesions * dim) fail(ErrorCode::kShape, "projection payload does not match [M][N][D]");
  if (!lesion_ids.empty() && lesion_ids.size() != lesions) fail(ErrorCode::kShape, "lesion id count mismatch");
  for (std::size_t m = 0; m < views; ++m) {
    for (std::size_t i = 0; i < lesions; ++i) {
      const auto v = at(m, i);
      const Real norm = std::sqrt(dot(v, v));
      if (!std::isfinite(norm)) fail(ErrorCode::kNumeric, "non-finite projection");
      if (std::abs(norm - 1.0) > tolerance) {
        std::ostringstream os;
        os << "projection (view " << m << ", lesion " << i << ") has norm " << norm;
        fail(ErrorCode::kInvalidArgument, os.str());
      }
    }
  }
}

Real cosine_sim(std::span<const Real> u, std::span<const Real> v) {
  if (u.size() != v.size()) fail(ErrorCode::kShape, "cosine_sim length mismatch");
  const Real nu = std::sqrt(dot(u, u));
  const Real nv = std::sqrt(dot(v, v));
  if (nu == 0.0 || nv == 0.0) fail(ErrorCode::kUndefinedSimilarity, "cosine similarity of a zero vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

Real pair_loss(const ProjectionBatch& batch, std::size_t m, std::size_t j, std::size_t i, LossMode mode) {
  batch.validate();
  check_pair(batch, m, j, i, mode);
  std::vector<Real> logits(batch.lesions);
  for (std::size_t k = 0; k < batch.lesions; ++k) logits[k] = dot(batch.at(m, i), batch.at(j, k)) / batch.tau;
  return row_loss(logits.data(), batch.lesions, i, mode, nullptr);
}

Real two_view_lesion_loss(const ProjectionBatch& batch, std::size_t i, LossMode mode) {
  if (batch.views != 2) fail(ErrorCode::kWrongArity, "two-view loss needs exactly two views");
  return pair_loss(batch, 0, 1, i, mode) + pair_loss(batch, 1, 0, i, mode);
}

Real anchor_loss(const ProjectionBatch& batch, std::size_t m, std::size_t i, LossMode mode) {
  Real sum = 0.0;
  for (std::size_t j = 0; j < batch.views; ++j) {
    if (j != m) sum += pair_loss(batch, m, j, i, mode);
  }
  return sum;
}

LossResult batch_loss(const ProjectionBatch& batch, LossMode mode) { return evaluate(batch, mode, false); }

LossResult batch_loss_backward(const ProjectionBatch& batch, LossMode mode) { return evaluate(batch, mode, true); }

nlohmann::json loss_diagnostics_row(int epoch, long step, Real loss, LossMode mode, Real tau) {
  return {{"epoch", epoch}, {"step", step}, {"loss", loss}, {"mode", to_string(mode)}, {"tau", tau}};
}

}  // namespace mvcl
