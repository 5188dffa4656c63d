#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mvcl/volume.hpp"

namespace mvcl {

inline constexpr int kNumPlanes = 9;
inline constexpr std::size_t kDefaultViewSize = 224;

/// One fixed slicing orientation through a lesion cube.
struct ViewPlane {
  int id = 0;  // 1..9
  Vec3 normal{};
  Vec3 u_axis{};
  Vec3 v_axis{};
};

/// The nine symmetry planes of a cube, in id order: the three face-parallel
/// planes (normals +z, +y, +x) followed by the six face-diagonal planes.
const std::array<ViewPlane, kNumPlanes>& plane_table();
const ViewPlane& plane(int id);

struct View2D {
  std::string lesion_id;
  int plane_id = 0;
  std::size_t size = 0;
  std::vector<float> pixels;  // row-major [b][a], size * size values in [0, 1]

  float at(std::size_t row, std::size_t col) const { return pixels[row * size + col]; }
};

/// All views of one lesion, sorted by plane id.
struct ViewSet {
  std::string lesion_id;
  std::vector<View2D> views;

  std::size_t count() const noexcept { return views.size(); }
  std::size_t out_size() const noexcept { return views.empty() ? 0 : views.front().size; }
  std::vector<int> plane_ids() const;
  const View2D& view_for(int plane_id) const;  // kMissingData if absent
  void validate() const;
};

/// Samples a side x side grid on `plane` through the cube centre (trilinear,
/// zero outside the cube) and bilinearly resizes it to out_size x out_size.
///
/// Pixel (row b, column a) corresponds to the cube point
///   c + (a - (s-1)/2) * u + (b - (s-1)/2) * v,   c = ((s-1)/2, (s-1)/2, (s-1)/2).
View2D extract_view(const LesionCube& cube, const ViewPlane& plane,
                    std::size_t out_size = kDefaultViewSize);

/// Extracts the requested planes, deduplicated and ordered by id.
ViewSet extract_views(const LesionCube& cube, std::span<const int> plane_ids,
                      std::size_t out_size = kDefaultViewSize);

/// Bilinear resize with corner-aligned sampling; out == in is the identity.
std::vector<float> resize_bilinear(std::span<const float> image, std::size_t in_size,
                                   std::size_t out_size);

// float32 stack [M, out_size, out_size] in `<stem>.raw` with a JSON sidecar
// {lesion_id, plane_ids, out_size} in `<stem>.json`.
void save_view_set(const ViewSet& set, const std::filesystem::path& stem);
ViewSet load_view_set(const std::filesystem::path& stem);

}  // namespace mvcl
