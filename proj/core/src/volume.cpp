#include "mvcl/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include <nlohmann/json.hpp>

#include "io_util.hpp"
#include "mvcl/errors.hpp"

namespace mvcl {

namespace {

std::size_t product(const Dims3& d) { return d[0] * d[1] * d[2]; }

struct Lerp {
  std::size_t i0, i1;
  double w;  // weight of i1
};

// Linear interpolation stencil along one axis, clamped to [0, n - 1].
Lerp stencil(double coord, std::size_t n) {
  if (n == 1) return {0, 0, 0.0};
  const double hi = static_cast<double>(n - 1);
  coord = std::clamp(coord, 0.0, hi);
  auto i0 = static_cast<std::size_t>(std::floor(coord));
  i0 = std::min(i0, n - 2);
  return {i0, i0 + 1, coord - static_cast<double>(i0)};
}

}  // namespace

Volume::Volume(Dims3 dims, Vec3 spacing_mm, float fill, bool normalized)
    : dims_(dims), spacing_(spacing_mm), data_(product(dims), fill), normalized_(normalized) {
  validate();
}

Volume::Volume(Dims3 dims, Vec3 spacing_mm, std::vector<float> data, bool normalized)
    : dims_(dims), spacing_(spacing_mm), data_(std::move(data)), normalized_(normalized) {
  validate();
}

void Volume::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims_[a] < 1) fail(ErrorCode::kInvalidArgument, "volume dimension must be >= 1");
    if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a])) {
      fail(ErrorCode::kInvalidArgument, "voxel spacing must be positive");
    }
  }
  if (data_.size() != product(dims_)) {
    fail(ErrorCode::kInvalidArgument, "volume payload size does not match dims");
  }
  if (normalized_) {
    for (float v : data_) {
      if (!(v >= 0.0F && v <= 1.0F)) {
        fail(ErrorCode::kInvalidArgument, "normalized volume has value outside [0, 1]");
      }
    }
  }
}

Volume LesionCube::to_volume() const {
  return Volume({side, side, side}, {1.0, 1.0, 1.0}, data, true);
}

Volume hu_window(const Volume& volume, double lo, double hi) {
  if (!(lo < hi)) fail(ErrorCode::kInvalidWindow, "window requires lo < hi");
  if (volume.normalized()) fail(ErrorCode::kInvalidArgument, "volume is already normalized");
  const double width = hi - lo;
  std::vector<float> out(volume.size());
  std::transform(volume.data().begin(), volume.data().end(), out.begin(), [&](float x) {
    return static_cast<float>(std::clamp((static_cast<double>(x) - lo) / width, 0.0, 1.0));
  });
  return Volume(volume.dims(), volume.spacing(), std::move(out), true);
}

Volume resample_isotropic(const Volume& volume, double target_mm) {
  if (!(target_mm > 0.0)) fail(ErrorCode::kInvalidArgument, "target spacing must be positive");
  const auto& src = volume.dims();
  const auto& sp = volume.spacing();
  Dims3 dst{};
  for (int a = 0; a < 3; ++a) {
    const double n = std::round(static_cast<double>(src[a]) * sp[a] / target_mm);
    dst[a] = std::max<std::size_t>(1, static_cast<std::size_t>(n));
  }

  std::array<std::vector<Lerp>, 3> axis;
  for (int a = 0; a < 3; ++a) {
    axis[a].reserve(dst[a]);
    for (std::size_t i = 0; i < dst[a]; ++i) {
      axis[a].push_back(stencil(static_cast<double>(i) * target_mm / sp[a], src[a]));
    }
  }

  Volume out(dst, {target_mm, target_mm, target_mm}, 0.0F, false);
  for (std::size_t z = 0; z < dst[2]; ++z) {
    const Lerp& lz = axis[2][z];
    for (std::size_t y = 0; y < dst[1]; ++y) {
      const Lerp& ly = axis[1][y];
      for (std::size_t x = 0; x < dst[0]; ++x) {
        const Lerp& lx = axis[0][x];
        auto v = [&](std::size_t i, std::size_t j, std::size_t k) {
          return static_cast<double>(volume.at(i, j, k));
        };
        const double c00 = v(lx.i0, ly.i0, lz.i0) * (1 - lx.w) + v(lx.i1, ly.i0, lz.i0) * lx.w;
        const double c10 = v(lx.i0, ly.i1, lz.i0) * (1 - lx.w) + v(lx.i1, ly.i1, lz.i0) * lx.w;
        const double c01 = v(lx.i0, ly.i0, lz.i1) * (1 - lx.w) + v(lx.i1, ly.i0, lz.i1) * lx.w;
        const double c11 = v(lx.i0, ly.i1, lz.i1) * (1 - lx.w) + v(lx.i1, ly.i1, lz.i1) * lx.w;
        const double c0 = c00 * (1 - ly.w) + c10 * ly.w;
        const double c1 = c01 * (1 - ly.w) + c11 * ly.w;
        out.at(x, y, z) = static_cast<float>(c0 * (1 - lz.w) + c1 * lz.w);
      }
    }
  }
  if (volume.normalized()) {
    return Volume(out.dims(), out.spacing(), std::move(out.data()), true);
  }
  return out;
}

LesionCube crop_lesion(const Volume& volume, const Vec3& center_mm, double side_mm,
                       std::string lesion_id) {
  if (!volume.normalized()) fail(ErrorCode::kInvalidArgument, "crop requires a normalized volume");
  for (double s : volume.spacing()) {
    if (std::abs(s - 1.0) > 1e-6) fail(ErrorCode::kInvalidArgument, "crop requires 1 mm isotropic spacing");
  }
  if (!(side_mm > 0.0)) fail(ErrorCode::kInvalidArgument, "cube side must be positive");
  const auto n = static_cast<std::ptrdiff_t>(std::llround(side_mm));
  if (n < 1) fail(ErrorCode::kInvalidArgument, "cube side rounds to zero voxels");

  std::array<std::ptrdiff_t, 3> start{};
  for (int a = 0; a < 3; ++a) {
    const auto c = static_cast<std::ptrdiff_t>(std::llround(center_mm[a] / volume.spacing()[a]));
    if (c < 0 || c >= static_cast<std::ptrdiff_t>(volume.dims()[a])) {
      fail(ErrorCode::kOutOfBounds, "lesion centre lies outside the volume");
    }
    start[a] = c - n / 2;
  }

  LesionCube cube;
  cube.lesion_id = std::move(lesion_id);
  cube.side = static_cast<std::size_t>(n);
  cube.data.assign(cube.side * cube.side * cube.side, 0.0F);
  const auto& d = volume.dims();
  for (std::ptrdiff_t z = 0; z < n; ++z) {
    const auto sz = start[2] + z;
    if (sz < 0 || sz >= static_cast<std::ptrdiff_t>(d[2])) continue;
    for (std::ptrdiff_t y = 0; y < n; ++y) {
      const auto sy = start[1] + y;
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(d[1])) continue;
      for (std::ptrdiff_t x = 0; x < n; ++x) {
        const auto sx = start[0] + x;
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(d[0])) continue;
        cube.at(x, y, z) = volume.at(sx, sy, sz);
      }
    }
  }
  return cube;
}

double crop_side_for(const CropPolicy& policy, double longest_diameter_mm) {
  if (policy.margin_mm < 0.0 || !(policy.fixed_mm > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "invalid crop policy");
  }
  switch (policy.kind) {
    case CropPolicy::Kind::kFixedNodule:
      return policy.fixed_mm;
    case CropPolicy::Kind::kDiameterPlusMargin:
      if (longest_diameter_mm < 0.0 || !std::isfinite(longest_diameter_mm)) {
        fail(ErrorCode::kInvalidAnnotation, "negative lesion diameter");
      }
      return longest_diameter_mm + policy.margin_mm;
  }
  return policy.fixed_mm;
}

void save_volume(const Volume& volume, const std::filesystem::path& stem_in) {
  const auto stem = detail::strip_payload_extension(stem_in);
  const auto& d = volume.dims();
  const auto& s = volume.spacing();
  nlohmann::json side = {
      {"dims", {d[0], d[1], d[2]}},
      {"spacing_mm", {s[0], s[1], s[2]}},
      {"dtype", volume.normalized() ? "float32" : "int16"},
      {"normalized", volume.normalized()},
  };
  if (volume.normalized()) {
    detail::write_bytes(detail::with_suffix(stem, ".raw"),
                        detail::as_bytes(std::span<const float>(volume.data())));
  } else {
    std::vector<std::int16_t> hu(volume.size());
    std::transform(volume.data().begin(), volume.data().end(), hu.begin(), [](float v) {
      const double r = std::round(static_cast<double>(v));
      return static_cast<std::int16_t>(std::clamp(r, -32768.0, 32767.0));
    });
    detail::write_bytes(detail::with_suffix(stem, ".raw"),
                        detail::as_bytes(std::span<const std::int16_t>(hu)));
  }
  detail::write_text(detail::with_suffix(stem, ".json"), side.dump(2) + "\n");
}

Volume load_volume(const std::filesystem::path& stem_in) {
  const auto stem = detail::strip_payload_extension(stem_in);
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(detail::read_text(detail::with_suffix(stem, ".json")));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, "malformed volume sidecar " + stem.string() + ".json: " + e.what());
  }
  try {
    const auto dv = side.at("dims").get<std::vector<std::size_t>>();
    const auto sv = side.at("spacing_mm").get<std::vector<double>>();
    const auto dtype = side.at("dtype").get<std::string>();
    const bool normalized = side.at("normalized").get<bool>();
    if (dv.size() != 3 || sv.size() != 3) fail(ErrorCode::kIo, "sidecar dims/spacing must have 3 entries");
    const Dims3 dims{dv[0], dv[1], dv[2]};
    const Vec3 spacing{sv[0], sv[1], sv[2]};
    const auto bytes = detail::read_file(detail::with_suffix(stem, ".raw"));
    const std::size_t n = product(dims);
    if (dtype == "float32") {
      if (bytes.size() != n * sizeof(float)) fail(ErrorCode::kIo, "payload size mismatch in " + stem.string());
      return Volume(dims, spacing, detail::from_bytes<float>(bytes), normalized);
    }
    if (dtype == "int16") {
      if (bytes.size() != n * sizeof(std::int16_t)) fail(ErrorCode::kIo, "payload size mismatch in " + stem.string());
      const auto hu = detail::from_bytes<std::int16_t>(bytes);
      return Volume(dims, spacing, std::vector<float>(hu.begin(), hu.end()), normalized);
    }
    fail(ErrorCode::kIo, "unsupported dtype '" + dtype + "'");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, "malformed volume sidecar " + stem.string() + ".json: " + e.what());
  }
}

}  // namespace mvcl
