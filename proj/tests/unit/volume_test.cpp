#include "mvcl/volume.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace mvcl {
namespace {

Volume hu_volume(std::vector<float> values) {
  const auto n = values.size();
  return Volume({n, 1, 1}, {1.0, 1.0, 1.0}, std::move(values), false);
}

// Independent pointwise linear interpolation along one axis with edge clamp.
double lerp_profile(const std::vector<double>& profile, double coord) {
  const double max_index = static_cast<double>(profile.size() - 1);
  coord = std::min(std::max(coord, 0.0), max_index);
  const auto lo = static_cast<std::size_t>(std::floor(coord));
  const auto hi = std::min(lo + 1, profile.size() - 1);
  const double t = coord - static_cast<double>(lo);
  return (1.0 - t) * profile[lo] + t * profile[hi];
}

TEST(HuWindow, ClampsAndScales) {
  const auto out = hu_window(hu_volume({-1000.0F, 400.0F, 1200.0F, -300.0F, -2000.0F}));
  EXPECT_TRUE(out.normalized());
  EXPECT_FLOAT_EQ(out.data()[0], 0.0F);
  EXPECT_FLOAT_EQ(out.data()[1], 1.0F);
  EXPECT_FLOAT_EQ(out.data()[2], 1.0F);
  EXPECT_FLOAT_EQ(out.data()[3], 0.5F);
  EXPECT_FLOAT_EQ(out.data()[4], 0.0F);
}

TEST(HuWindow, KeepsShapeAndSpacing) {
  Volume v({3, 4, 5}, {0.7, 0.8, 2.5}, 0.0F, false);
  const auto out = hu_window(v);
  EXPECT_EQ(out.dims(), v.dims());
  EXPECT_EQ(out.spacing(), v.spacing());
}

TEST(HuWindow, RejectsEmptyWindow) {
  const auto v = hu_volume({0.0F});
  EXPECT_MVCL_ERROR(hu_window(v, 100.0, 100.0), ErrorCode::kInvalidWindow);
  EXPECT_MVCL_ERROR(hu_window(v, 400.0, -1000.0), ErrorCode::kInvalidWindow);
}

TEST(HuWindow, RejectsNormalizedInput) {
  const auto v = hu_window(hu_volume({0.0F}));
  EXPECT_MVCL_ERROR(hu_window(v), ErrorCode::kInvalidArgument);
}

TEST(HuWindow, InvertsLinearMapInsideWindow) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<float> hu;
  std::vector<double> y;
  for (int i = 0; i < 200; ++i) {
    y.push_back(unit(rng));
    hu.push_back(static_cast<float>(-1000.0 + 1400.0 * y.back()));
  }
  const auto out = hu_window(hu_volume(hu));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(out.data()[i], y[i], 1e-6);
}

TEST(Resample, IdentityAtUnitSpacing) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> unit(-1000.0F, 400.0F);
  Volume v({5, 6, 7}, {1.0, 1.0, 1.0});
  for (auto& x : v.data()) x = unit(rng);
  const auto out = resample_isotropic(v);
  EXPECT_EQ(out.dims(), v.dims());
  EXPECT_EQ(out.data(), v.data());
}

TEST(Resample, ConstantStaysConstant) {
  Volume v({4, 5, 3}, {0.7, 1.3, 2.5}, -123.5F);
  const auto out = resample_isotropic(v);
  EXPECT_EQ(out.spacing(), (Vec3{1.0, 1.0, 1.0}));
  EXPECT_EQ(out.dims(), (Dims3{3, 7, 8}));
  for (float x : out.data()) EXPECT_FLOAT_EQ(x, -123.5F);
}

TEST(Resample, LinearZProfileMatchesPointwiseOracle) {
  Volume v({4, 4, 4}, {1.0, 1.0, 2.0});
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) v.at(x, y, z) = static_cast<float>(z);
  const auto out = resample_isotropic(v);
  ASSERT_EQ(out.dims(), (Dims3{4, 4, 8}));
  const std::vector<double> profile{0.0, 1.0, 2.0, 3.0};
  for (std::size_t z = 0; z < 8; ++z) {
    const double expected = lerp_profile(profile, static_cast<double>(z) * 1.0 / 2.0);
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(out.at(x, y, z), expected, 1e-6) << "z=" << z;
  }
}

TEST(Resample, CommutesWithWindowInsideRange) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> hu(-1000.0F, 400.0F);
  Volume v({6, 5, 4}, {0.8, 1.25, 2.0});
  for (auto& x : v.data()) x = hu(rng);
  const auto a = resample_isotropic(hu_window(v));
  const auto b = hu_window(resample_isotropic(v));
  ASSERT_EQ(a.dims(), b.dims());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-6);
}

TEST(Resample, RejectsBadTarget) {
  Volume v({2, 2, 2}, {1.0, 1.0, 1.0});
  EXPECT_MVCL_ERROR(resample_isotropic(v, 0.0), ErrorCode::kInvalidArgument);
}

Volume ramp_volume(std::size_t n) {
  Volume v({n, n, n}, {1.0, 1.0, 1.0}, 0.0F, true);
  for (std::size_t z = 0; z < n; ++z)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        v.at(x, y, z) = static_cast<float>((x + 3 * y + 7 * z) % 97) / 96.0F;
  return v;
}

TEST(Crop, InteriorCropEqualsSubarray) {
  const auto v = ramp_volume(20);
  const auto cube = crop_lesion(v, {10.0, 10.0, 10.0}, 6.0, "inner");
  ASSERT_EQ(cube.side, 6U);
  EXPECT_EQ(cube.lesion_id, "inner");
  // Cube index i maps to source index center - side/2 + i.
  for (std::size_t z = 0; z < 6; ++z)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x) EXPECT_EQ(cube.at(x, y, z), v.at(7 + x, 7 + y, 7 + z));
}

TEST(Crop, CornerCenterZeroFillsExterior) {
  const auto v = ramp_volume(10);
  const auto cube = crop_lesion(v, {0.0, 0.0, 0.0}, 8.0);
  ASSERT_EQ(cube.side, 8U);
  for (std::size_t z = 0; z < 8; ++z)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const bool outside = x < 4 || y < 4 || z < 4;
        if (outside) {
          EXPECT_EQ(cube.at(x, y, z), 0.0F);
        } else {
          EXPECT_EQ(cube.at(x, y, z), v.at(x - 4, y - 4, z - 4));
        }
      }
}

TEST(Crop, SixtyFourMillimetreCube) {
  Volume v({40, 40, 40}, {1.0, 1.0, 1.0}, 0.25F, true);
  const auto cube = crop_lesion(v, {20.0, 20.0, 20.0}, 64.0);
  EXPECT_EQ(cube.side, 64U);
  EXPECT_EQ(cube.data.size(), 64U * 64U * 64U);
  for (float x : cube.data) {
    EXPECT_GE(x, 0.0F);
    EXPECT_LE(x, 1.0F);
  }
}

TEST(Crop, RoundsNonIntegerSide) {
  Volume v({10, 10, 10}, {1.0, 1.0, 1.0}, 0.5F, true);
  EXPECT_EQ(crop_lesion(v, {5.0, 5.0, 5.0}, 30.4).side, 30U);
  EXPECT_EQ(crop_lesion(v, {5.0, 5.0, 5.0}, 30.6).side, 31U);
}

TEST(Crop, Errors) {
  Volume v({10, 10, 10}, {1.0, 1.0, 1.0}, 0.5F, true);
  EXPECT_MVCL_ERROR(crop_lesion(v, {50.0, 5.0, 5.0}, 8.0), ErrorCode::kOutOfBounds);
  EXPECT_MVCL_ERROR(crop_lesion(v, {5.0, -3.0, 5.0}, 8.0), ErrorCode::kOutOfBounds);
  EXPECT_MVCL_ERROR(crop_lesion(v, {5.0, 5.0, 5.0}, 0.0), ErrorCode::kInvalidArgument);
  Volume raw({10, 10, 10}, {1.0, 1.0, 1.0});
  EXPECT_MVCL_ERROR(crop_lesion(raw, {5.0, 5.0, 5.0}, 4.0), ErrorCode::kInvalidArgument);
  Volume aniso({10, 10, 10}, {1.0, 1.0, 2.0}, 0.5F, true);
  EXPECT_MVCL_ERROR(crop_lesion(aniso, {5.0, 5.0, 5.0}, 4.0), ErrorCode::kInvalidArgument);
}

TEST(CropSide, Policies) {
  EXPECT_EQ(crop_side_for(CropPolicy::fixed_nodule(), 12.0), 64.0);
  EXPECT_EQ(crop_side_for(CropPolicy::diameter_plus_margin(), 10.0), 30.0);
  EXPECT_EQ(crop_side_for(CropPolicy::diameter_plus_margin(), 0.0), 20.0);
  EXPECT_MVCL_ERROR(crop_side_for(CropPolicy::diameter_plus_margin(), -1.0), ErrorCode::kInvalidAnnotation);
}

TEST(VolumeIo, RoundTripsHuAndNormalized) {
  testing::TempDir dir;
  Volume hu({3, 2, 4}, {0.7, 0.7, 1.25});
  for (std::size_t i = 0; i < hu.size(); ++i) hu.data()[i] = static_cast<float>(static_cast<int>(i) * 37 - 400);
  save_volume(hu, dir / "hu");
  const auto hu_back = load_volume(dir / "hu");
  EXPECT_EQ(hu_back.dims(), hu.dims());
  EXPECT_EQ(hu_back.spacing(), hu.spacing());
  EXPECT_FALSE(hu_back.normalized());
  EXPECT_EQ(hu_back.data(), hu.data());
  EXPECT_EQ(std::filesystem::file_size(dir / "hu.raw"), hu.size() * sizeof(std::int16_t));

  const auto norm = hu_window(hu);
  save_volume(norm, dir / "norm");
  const auto norm_back = load_volume(dir / "norm.raw");
  EXPECT_TRUE(norm_back.normalized());
  EXPECT_EQ(norm_back.data(), norm.data());
  EXPECT_EQ(std::filesystem::file_size(dir / "norm.raw"), norm.size() * sizeof(float));
}

TEST(VolumeIo, XFastestLayoutOnDisk) {
  testing::TempDir dir;
  Volume v({2, 2, 2}, {1.0, 1.0, 1.0});
  v.at(1, 0, 0) = 1.0F;
  v.at(0, 1, 0) = 2.0F;
  v.at(0, 0, 1) = 4.0F;
  save_volume(v, dir / "v");
  std::ifstream in(dir / "v.raw", std::ios::binary);
  std::int16_t raw[8];
  in.read(reinterpret_cast<char*>(raw), sizeof(raw));
  EXPECT_EQ(raw[1], 1);
  EXPECT_EQ(raw[2], 2);
  EXPECT_EQ(raw[4], 4);
}

TEST(VolumeIo, MissingFileIsIoError) {
  testing::TempDir dir;
  EXPECT_MVCL_ERROR(load_volume(dir / "absent"), ErrorCode::kIo);
}

TEST(VolumeInvariants, ValidateRejectsBadSpacingAndRange) {
  EXPECT_MVCL_ERROR(Volume({2, 2, 2}, {1.0, 0.0, 1.0}).validate(), ErrorCode::kInvalidArgument);
  EXPECT_MVCL_ERROR(Volume({2, 2, 2}, {1.0, 1.0, 1.0}, 1.5F, true).validate(), ErrorCode::kInvalidArgument);
}

}  // namespace
}  // namespace mvcl
