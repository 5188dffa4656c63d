#include "mvcl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mvcl/errors.hpp"

namespace mvcl {

namespace {

using Mat3 = std::array<Vec3, 3>;  // rows

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Vec3 v{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (len > 1e-9) return {v[0] / len, v[1] / len, v[2] / len};
  }
}

// Rotation matrix from a uniformly random unit quaternion.
Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  double w = n(rng), x = n(rng), y = n(rng), z = n(rng);
  const double len = std::sqrt(w * w + x * x + y * y + z * z);
  w /= len, x /= len, y /= len, z /= len;
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
           {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
           {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

struct Ridge {
  Vec3 dir;
  double length, width, amplitude;
};

}  // namespace

std::string to_string(SyntheticClass c) {
  return c == SyntheticClass::kSmoothBlob ? "smooth_blob" : "spiculated_blob";
}

LesionCube gen_synthetic_lesion(SyntheticClass cls, std::size_t side, std::uint64_t seed,
                                const SyntheticParams& params) {
  if (side < 9) fail(ErrorCode::kInvalidArgument, "synthetic lesions need side >= 9");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(cls == SyntheticClass::kSmoothBlob ? 1 : 2)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double s = static_cast<double>(side);
  const double mid = 0.5 * (s - 1.0);
  const Vec3 center{mid + between(-1.0, 1.0), mid + between(-1.0, 1.0), mid + between(-1.0, 1.0)};
  const Mat3 rot = random_rotation(rng);
  Vec3 inv_var{};
  for (auto& iv : inv_var) {
    const double sigma = s * between(params.core_sigma_min, params.core_sigma_max);
    iv = 1.0 / (sigma * sigma);
  }
  const double amplitude = between(0.55, 0.9);

  std::vector<Ridge> ridges;
  if (cls == SyntheticClass::kSpiculatedBlob) {
    const int count = std::uniform_int_distribution<int>(params.min_ridges, params.max_ridges)(rng);
    for (int r = 0; r < count; ++r) {
      Ridge ridge;
      ridge.dir = random_unit(rng);
      ridge.length = s * between(params.ridge_length_min, params.ridge_length_max);
      ridge.width = between(params.ridge_width_min, params.ridge_width_max);
      ridge.amplitude = amplitude * between(0.6, 0.9);
      ridges.push_back(ridge);
    }
  }

  LesionCube cube;
  cube.lesion_id = to_string(cls) + "_" + std::to_string(seed);
  cube.side = side;
  cube.data.resize(side * side * side);
  std::normal_distribution<double> noise(0.0, params.noise_sigma);
  for (std::size_t z = 0; z < side; ++z) {
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const Vec3 d{static_cast<double>(x) - center[0], static_cast<double>(y) - center[1],
                     static_cast<double>(z) - center[2]};
        double q = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double r = rot[a][0] * d[0] + rot[a][1] * d[1] + rot[a][2] * d[2];
          q += r * r * inv_var[a];
        }
        double value = amplitude * std::exp(-0.5 * q);
        for (const auto& ridge : ridges) {
          const double t = std::clamp(d[0] * ridge.dir[0] + d[1] * ridge.dir[1] + d[2] * ridge.dir[2], 0.0,
                                      ridge.length);
          double dist2 = 0.0;
          for (int a = 0; a < 3; ++a) {
            const double e = d[a] - t * ridge.dir[a];
            dist2 += e * e;
          }
          const double taper = 1.0 - 0.5 * t / ridge.length;
          value = std::max(value, ridge.amplitude * taper * std::exp(-0.5 * dist2 / (ridge.width * ridge.width)));
        }
        value += noise(rng);
        cube.at(x, y, z) = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return cube;
}

}  // namespace mvcl
