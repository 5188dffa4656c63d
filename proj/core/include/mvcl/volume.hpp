#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace mvcl {

using Vec3 = std::array<double, 3>;
using Dims3 = std::array<std::size_t, 3>;

/// Dense 3D scalar grid with physical voxel spacing.
///
/// Storage is x-fastest: the voxel (x, y, z) lives at x + nx * (y + ny * z).
/// Values are raw Hounsfield units until hu_window() marks the volume as
/// normalized, after which every value lies in [0, 1].
class Volume {
 public:
  Volume() = default;
  Volume(Dims3 dims, Vec3 spacing_mm, float fill = 0.0F, bool normalized = false);
  Volume(Dims3 dims, Vec3 spacing_mm, std::vector<float> data, bool normalized);

  const Dims3& dims() const noexcept { return dims_; }
  const Vec3& spacing() const noexcept { return spacing_; }
  bool normalized() const noexcept { return normalized_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + dims_[0] * (y + dims_[1] * z);
  }
  float& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }

  std::vector<float>& data() noexcept { return data_; }
  const std::vector<float>& data() const noexcept { return data_; }

  // Throws kInvalidArgument when an invariant does not hold.
  void validate() const;

 private:
  Dims3 dims_{1, 1, 1};
  Vec3 spacing_{1.0, 1.0, 1.0};
  std::vector<float> data_ = std::vector<float>(1, 0.0F);
  bool normalized_ = false;
};

/// Isotropic 1 mm cube of normalized intensities cropped around a lesion.
struct LesionCube {
  std::string lesion_id;
  std::size_t side = 0;
  std::vector<float> data;  // x-fastest, side^3 values in [0, 1]

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + side * (y + side * z);
  }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return data[index(x, y, z)]; }
  float& at(std::size_t x, std::size_t y, std::size_t z) { return data[index(x, y, z)]; }
  double side_mm() const noexcept { return static_cast<double>(side); }

  Volume to_volume() const;
};

struct CropPolicy {
  enum class Kind { kFixedNodule, kDiameterPlusMargin };
  Kind kind = Kind::kFixedNodule;
  double fixed_mm = 64.0;
  double margin_mm = 20.0;

  static CropPolicy fixed_nodule(double side_mm = 64.0) { return {Kind::kFixedNodule, side_mm, 20.0}; }
  static CropPolicy diameter_plus_margin(double margin = 20.0) {
    return {Kind::kDiameterPlusMargin, 64.0, margin};
  }
};

inline constexpr double kDefaultHuLow = -1000.0;
inline constexpr double kDefaultHuHigh = 400.0;

/// Clamp HU to [lo, hi] and map linearly onto [0, 1].
Volume hu_window(const Volume& volume, double lo = kDefaultHuLow, double hi = kDefaultHuHigh);

/// Trilinear resampling onto an isotropic grid of `target_mm` spacing.
/// Output dims are round(dim * spacing / target), at least 1; target sample
/// coordinates that fall past the last source voxel clamp to the boundary.
Volume resample_isotropic(const Volume& volume, double target_mm = 1.0);

/// Crops a round(side_mm)^3 cube centred on the voxel nearest `center_mm`.
/// Voxels outside the source volume are zero.
LesionCube crop_lesion(const Volume& volume, const Vec3& center_mm, double side_mm,
                       std::string lesion_id = {});

double crop_side_for(const CropPolicy& policy, double longest_diameter_mm);

// Raw little-endian payload (`<stem>.raw`) plus JSON sidecar (`<stem>.json`).
// HU volumes are written as int16, normalized volumes as float32.
void save_volume(const Volume& volume, const std::filesystem::path& stem);
Volume load_volume(const std::filesystem::path& stem);

}  // namespace mvcl
