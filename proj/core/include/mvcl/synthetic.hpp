#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "mvcl/volume.hpp"

namespace mvcl {

enum class SyntheticClass { kSmoothBlob, kSpiculatedBlob };

std::string to_string(SyntheticClass c);

/// Generator knobs. These are calibration constants for desk-scale
/// experiments, not measurements of real lesions.
struct SyntheticParams {
  double noise_sigma = 0.02;
  int min_ridges = 4;
  int max_ridges = 8;
  double core_sigma_min = 0.08;  // fraction of the cube side
  double core_sigma_max = 0.16;
  double ridge_length_min = 0.38;  // fraction of the cube side
  double ridge_length_max = 0.50;
  double ridge_width_min = 2.0;  // Gaussian cross-section sigma, voxels
  double ridge_width_max = 3.0;
};

/// smooth_blob: rotated anisotropic Gaussian core with random amplitude.
/// spiculated_blob: the same kind of core plus 4-8 radial ridges.
/// Both get additive Gaussian noise and are clamped to [0, 1]; the cube is a
/// pure function of (class, side, seed).
LesionCube gen_synthetic_lesion(SyntheticClass cls, std::size_t side, std::uint64_t seed,
                                const SyntheticParams& params = {});

}  // namespace mvcl
