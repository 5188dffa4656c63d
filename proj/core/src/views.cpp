#include "mvcl/views.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "io_util.hpp"
#include "mvcl/errors.hpp"

namespace mvcl {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

ViewPlane make_plane(int id, Vec3 n, Vec3 u, Vec3 v) { return {id, n, u, v}; }

// Trilinear read at a continuous voxel coordinate; anything outside
// [0, s-1]^3 reads zero.
double sample_cube(const LesionCube& cube, const Vec3& p) {
  const auto s = cube.side;
  const double hi = static_cast<double>(s - 1);
  constexpr double kSlack = 1e-9;
  std::array<std::size_t, 3> i0{};
  std::array<std::size_t, 3> i1{};
  std::array<double, 3> w{};
  for (int a = 0; a < 3; ++a) {
    double c = p[a];
    if (c < -kSlack || c > hi + kSlack) return 0.0;
    c = std::clamp(c, 0.0, hi);
    if (s == 1) {
      i0[a] = i1[a] = 0;
      w[a] = 0.0;
      continue;
    }
    auto lo = static_cast<std::size_t>(std::floor(c));
    lo = std::min(lo, s - 2);
    i0[a] = lo;
    i1[a] = lo + 1;
    w[a] = c - static_cast<double>(lo);
  }
  auto v = [&](std::size_t x, std::size_t y, std::size_t z) {
    return static_cast<double>(cube.at(x, y, z));
  };
  const double c00 = v(i0[0], i0[1], i0[2]) * (1 - w[0]) + v(i1[0], i0[1], i0[2]) * w[0];
  const double c10 = v(i0[0], i1[1], i0[2]) * (1 - w[0]) + v(i1[0], i1[1], i0[2]) * w[0];
  const double c01 = v(i0[0], i0[1], i1[2]) * (1 - w[0]) + v(i1[0], i0[1], i1[2]) * w[0];
  const double c11 = v(i0[0], i1[1], i1[2]) * (1 - w[0]) + v(i1[0], i1[1], i1[2]) * w[0];
  const double c0 = c00 * (1 - w[1]) + c10 * w[1];
  const double c1 = c01 * (1 - w[1]) + c11 * w[1];
  return c0 * (1 - w[2]) + c1 * w[2];
}

}  // namespace

const std::array<ViewPlane, kNumPlanes>& plane_table() {
  const double r = kInvSqrt2;
  static const std::array<ViewPlane, kNumPlanes> table = {
      make_plane(1, {0, 0, 1}, {1, 0, 0}, {0, 1, 0}),
      make_plane(2, {0, 1, 0}, {1, 0, 0}, {0, 0, 1}),
      make_plane(3, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}),
      make_plane(4, {r, r, 0}, {r, -r, 0}, {0, 0, 1}),
      make_plane(5, {r, -r, 0}, {r, r, 0}, {0, 0, 1}),
      make_plane(6, {r, 0, r}, {r, 0, -r}, {0, 1, 0}),
      make_plane(7, {r, 0, -r}, {r, 0, r}, {0, 1, 0}),
      make_plane(8, {0, r, r}, {0, r, -r}, {1, 0, 0}),
      make_plane(9, {0, r, -r}, {0, r, r}, {1, 0, 0}),
  };
  return table;
}

const ViewPlane& plane(int id) {
  if (id < 1 || id > kNumPlanes) fail(ErrorCode::kInvalidArgument, "plane id must be in 1..9");
  return plane_table()[static_cast<std::size_t>(id - 1)];
}

std::vector<int> ViewSet::plane_ids() const {
  std::vector<int> ids;
  ids.reserve(views.size());
  for (const auto& v : views) ids.push_back(v.plane_id);
  return ids;
}

const View2D& ViewSet::view_for(int plane_id) const {
  for (const auto& v : views) {
    if (v.plane_id == plane_id) return v;
  }
  fail(ErrorCode::kMissingData,
       "lesion '" + lesion_id + "' has no view for plane " + std::to_string(plane_id));
}

void ViewSet::validate() const {
  if (views.size() < 2) fail(ErrorCode::kInsufficientViews, "a view set needs at least two views");
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i];
    if (v.lesion_id != lesion_id) fail(ErrorCode::kInvalidArgument, "view lesion id mismatch");
    if (v.size != views.front().size || v.pixels.size() != v.size * v.size) {
      fail(ErrorCode::kShape, "views in a set must share one square size");
    }
    if (i > 0 && views[i - 1].plane_id >= v.plane_id) {
      fail(ErrorCode::kInvalidArgument, "plane ids must be strictly increasing");
    }
  }
}

std::vector<float> resize_bilinear(std::span<const float> image, std::size_t in_size,
                                   std::size_t out_size) {
  if (image.size() != in_size * in_size) fail(ErrorCode::kShape, "image is not in_size^2");
  if (out_size == in_size) return {image.begin(), image.end()};
  std::vector<double> coord(out_size);
  for (std::size_t i = 0; i < out_size; ++i) {
    coord[i] = out_size == 1 ? 0.5 * static_cast<double>(in_size - 1)
                             : static_cast<double>(i) * static_cast<double>(in_size - 1) /
                                   static_cast<double>(out_size - 1);
  }
  auto split = [&](double c, std::size_t& lo, std::size_t& hi, double& w) {
    if (in_size == 1) {
      lo = hi = 0;
      w = 0.0;
      return;
    }
    lo = std::min(static_cast<std::size_t>(std::floor(c)), in_size - 2);
    hi = lo + 1;
    w = c - static_cast<double>(lo);
  };
  std::vector<float> out(out_size * out_size);
  for (std::size_t r = 0; r < out_size; ++r) {
    std::size_t r0 = 0, r1 = 0;
    double wr = 0.0;
    split(coord[r], r0, r1, wr);
    for (std::size_t c = 0; c < out_size; ++c) {
      std::size_t c0 = 0, c1 = 0;
      double wc = 0.0;
      split(coord[c], c0, c1, wc);
      const double top = image[r0 * in_size + c0] * (1 - wc) + image[r0 * in_size + c1] * wc;
      const double bot = image[r1 * in_size + c0] * (1 - wc) + image[r1 * in_size + c1] * wc;
      out[r * out_size + c] = static_cast<float>(top * (1 - wr) + bot * wr);
    }
  }
  return out;
}

View2D extract_view(const LesionCube& cube, const ViewPlane& plane, std::size_t out_size) {
  if (cube.side < 1 || cube.data.size() != cube.side * cube.side * cube.side) {
    fail(ErrorCode::kShape, "cube payload does not match its side");
  }
  if (out_size < 2) fail(ErrorCode::kInvalidArgument, "out_size must be >= 2");
  const std::size_t s = cube.side;
  const double half = 0.5 * static_cast<double>(s - 1);

  std::vector<float> grid(s * s);
  for (std::size_t b = 0; b < s; ++b) {
    const double db = static_cast<double>(b) - half;
    for (std::size_t a = 0; a < s; ++a) {
      const double da = static_cast<double>(a) - half;
      Vec3 p{};
      for (int k = 0; k < 3; ++k) p[k] = half + da * plane.u_axis[k] + db * plane.v_axis[k];
      grid[b * s + a] = static_cast<float>(std::clamp(sample_cube(cube, p), 0.0, 1.0));
    }
  }

  View2D view;
  view.lesion_id = cube.lesion_id;
  view.plane_id = plane.id;
  view.size = out_size;
  view.pixels = resize_bilinear(grid, s, out_size);
  return view;
}

ViewSet extract_views(const LesionCube& cube, std::span<const int> plane_ids, std::size_t out_size) {
  const std::set<int> unique(plane_ids.begin(), plane_ids.end());
  if (unique.size() < 2) {
    fail(ErrorCode::kInsufficientViews, "contrastive pairing needs at least two distinct planes");
  }
  ViewSet set;
  set.lesion_id = cube.lesion_id;
  for (int id : unique) set.views.push_back(extract_view(cube, plane(id), out_size));
  return set;
}

void save_view_set(const ViewSet& set, const std::filesystem::path& stem_in) {
  set.validate();
  const auto stem = detail::strip_payload_extension(stem_in);
  std::vector<float> stack;
  stack.reserve(set.count() * set.out_size() * set.out_size());
  for (const auto& v : set.views) stack.insert(stack.end(), v.pixels.begin(), v.pixels.end());
  nlohmann::json side = {
      {"lesion_id", set.lesion_id},
      {"plane_ids", set.plane_ids()},
      {"out_size", set.out_size()},
  };
  detail::write_bytes(detail::with_suffix(stem, ".raw"), detail::as_bytes(std::span<const float>(stack)));
  detail::write_text(detail::with_suffix(stem, ".json"), side.dump(2) + "\n");
}

ViewSet load_view_set(const std::filesystem::path& stem_in) {
  const auto stem = detail::strip_payload_extension(stem_in);
  ViewSet set;
  std::vector<int> ids;
  std::size_t size = 0;
  try {
    const auto side = nlohmann::json::parse(detail::read_text(detail::with_suffix(stem, ".json")));
    set.lesion_id = side.at("lesion_id").get<std::string>();
    ids = side.at("plane_ids").get<std::vector<int>>();
    size = side.at("out_size").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, "malformed view sidecar " + stem.string() + ".json: " + e.what());
  }
  const auto stack = detail::from_bytes<float>(detail::read_file(detail::with_suffix(stem, ".raw")));
  const std::size_t per = size * size;
  if (stack.size() != ids.size() * per) fail(ErrorCode::kIo, "view payload size mismatch in " + stem.string());
  for (std::size_t m = 0; m < ids.size(); ++m) {
    View2D v;
    v.lesion_id = set.lesion_id;
    v.plane_id = ids[m];
    v.size = size;
    v.pixels.assign(stack.begin() + static_cast<std::ptrdiff_t>(m * per),
                    stack.begin() + static_cast<std::ptrdiff_t>((m + 1) * per));
    set.views.push_back(std::move(v));
  }
  set.validate();
  return set;
}

}  // namespace mvcl
