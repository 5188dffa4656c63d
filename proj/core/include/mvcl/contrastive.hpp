#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mvcl/tensor.hpp"

namespace mvcl {

inline constexpr Real kDefaultTemperature = 0.07;
// Temperature of the desk-scale synthetic runs.
inline constexpr Real kDeskTemperature = 0.5;

/// Which terms enter the denominator of the per-pair loss.
///   kCmcInclusive: every lesion k in the target view, including the positive.
///   kAsWritten:    only k != i (negatives only); needs N >= 2.
enum class LossMode { kCmcInclusive, kAsWritten };

std::string to_string(LossMode mode);
LossMode loss_mode_from_string(const std::string& text);  // "cmc" | "as-written"

/// Unit-norm projections z[m][i] for M views of N lesions, D features each.
struct ProjectionBatch {
  std::size_t views = 0;
  std::size_t lesions = 0;
  std::size_t dim = 0;
  std::vector<Real> z;  // [M][N][D]
  std::vector<std::string> lesion_ids;
  Real tau = kDefaultTemperature;

  ProjectionBatch() = default;
  ProjectionBatch(std::size_t m, std::size_t n, std::size_t d, Real temperature = kDefaultTemperature);

  std::span<Real> at(std::size_t m, std::size_t i) { return {z.data() + (m * lesions + i) * dim, dim}; }
  std::span<const Real> at(std::size_t m, std::size_t i) const {
    return {z.data() + (m * lesions + i) * dim, dim};
  }

  // M >= 2, N >= 1, tau > 0, every vector unit norm within `tolerance`.
  void validate(Real tolerance = 1e-5) const;
};

/// u.v / (|u| |v|); kUndefinedSimilarity for a zero vector.
Real cosine_sim(std::span<const Real> u, std::span<const Real> v);

/// Directional loss with anchor z[m][i] against target view j:
///   -log( exp(s_ii / tau) / sum_k exp(s_ik / tau) ),  s_ik = sim(z[m][i], z[j][k]).
/// Negatives are drawn from the target view only.
Real pair_loss(const ProjectionBatch& batch, std::size_t m, std::size_t j, std::size_t i,
               LossMode mode = LossMode::kCmcInclusive);

/// pair_loss(0, 1, i) + pair_loss(1, 0, i); requires exactly two views.
Real two_view_lesion_loss(const ProjectionBatch& batch, std::size_t i, LossMode mode = LossMode::kCmcInclusive);

/// Sum over j != m of pair_loss(m, j, i).
Real anchor_loss(const ProjectionBatch& batch, std::size_t m, std::size_t i,
                 LossMode mode = LossMode::kCmcInclusive);

struct LossResult {
  Real value = 0.0;
  // pair_sums[m * M + j] = sum over lesions of pair_loss(m, j, i); diagonal is 0.
  std::vector<Real> pair_sums;
  // Gradient of `value` w.r.t. every z, laid out like ProjectionBatch::z.
  // Empty unless requested.
  std::vector<Real> grad;
};

/// L = 1/(2N) * sum_i sum_{m != j} pair_loss(m, j, i). The 1/(2N) factor is
/// kept for every M.
LossResult batch_loss(const ProjectionBatch& batch, LossMode mode = LossMode::kCmcInclusive);

/// batch_loss plus its analytic gradient. Similarities are dot products, so
/// the gradient is the unconstrained one; the projector's l2-normalization
/// backward removes the radial component.
LossResult batch_loss_backward(const ProjectionBatch& batch, LossMode mode = LossMode::kCmcInclusive);

/// One JSON diagnostics row {epoch, step, loss, mode, tau}.
nlohmann::json loss_diagnostics_row(int epoch, long step, Real loss, LossMode mode, Real tau);

}  // namespace mvcl
