#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

#include "mvcl/contrastive.hpp"

namespace mvcl::testing {

// Brute-force loss oracle, written against the formulas term by term: cosine similarity from scratch,
// plain exp and log without any stabilization, every (m, j, i, k) enumerated.

inline Real oracle_cosine(std::span<const Real> u, std::span<const Real> v) {
  Real uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t d = 0; d < u.size(); ++d) {
    uv += u[d] * v[d];
    uu += u[d] * u[d];
    vv += v[d] * v[d];
  }
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

inline Real oracle_pair(const ProjectionBatch& b, std::size_t m, std::size_t j, std::size_t i, LossMode mode) {
  const Real numerator = std::exp(oracle_cosine(b.at(m, i), b.at(j, i)) / b.tau);
  Real denominator = 0.0;
  for (std::size_t k = 0; k < b.lesions; ++k) {
    if (mode == LossMode::kAsWritten && k == i) continue;
    denominator += std::exp(oracle_cosine(b.at(m, i), b.at(j, k)) / b.tau);
  }
  return -std::log(numerator / denominator);
}

inline Real oracle_batch(const ProjectionBatch& b, LossMode mode) {
  Real total = 0.0;
  for (std::size_t i = 0; i < b.lesions; ++i) {
    Real lesion = 0.0;
    for (std::size_t m = 0; m < b.views; ++m) {
      for (std::size_t j = 0; j < b.views; ++j) {
        if (j != m) lesion += oracle_pair(b, m, j, i, mode);
      }
    }
    total += lesion;
  }
  return total / (2.0 * static_cast<Real>(b.lesions));
}

inline void normalize(std::span<Real> v) {
  Real n = 0.0;
  for (Real x : v) n += x * x;
  n = std::sqrt(n);
  for (Real& x : v) x /= n;
}

inline ProjectionBatch random_batch(std::size_t m, std::size_t n, std::size_t d, Real tau, std::uint64_t seed) {
  ProjectionBatch b(m, n, d, tau);
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> g(0.0, 1.0);
  for (auto& x : b.z) x = g(rng);
  for (std::size_t v = 0; v < m; ++v) {
    for (std::size_t i = 0; i < n; ++i) normalize(b.at(v, i));
  }
  return b;
}

}  // namespace mvcl::testing
