#include "gliopipe/augment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "gliopipe/error.hpp"

namespace gliopipe {

namespace {

std::atomic<std::uint64_t> g_invocations{0};

struct Dims3 {
  std::size_t x, y, z;
  int rank;
};

Dims3 dims_of(const ImageTensor& t) {
  if (t.dims.size() == 2) return {t.dims[0], t.dims[1], 1, 2};
  if (t.dims.size() == 3) return {t.dims[0], t.dims[1], t.dims[2], 3};
  throw DataError("augmentation expects a rank 2 or 3 image");
}

// Multilinear interpolation at continuous voxel-index coordinates; neighbors
// outside the grid contribute zero.
float sample(const ImageTensor& t, const Dims3& d, double x, double y, double z) {
  const double fx0 = std::floor(x);
  const double fy0 = std::floor(y);
  const double fz0 = std::floor(z);
  const double wx = x - fx0;
  const double wy = y - fy0;
  const double wz = z - fz0;
  const auto x0 = static_cast<long>(fx0);
  const auto y0 = static_cast<long>(fy0);
  const auto z0 = static_cast<long>(fz0);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const double w_z = dz ? wz : 1.0 - wz;
    const long zz = z0 + dz;
    if (w_z == 0.0 || zz < 0 || zz >= static_cast<long>(d.z)) continue;
    for (int dy = 0; dy < 2; ++dy) {
      const double w_y = dy ? wy : 1.0 - wy;
      const long yy = y0 + dy;
      if (w_y == 0.0 || yy < 0 || yy >= static_cast<long>(d.y)) continue;
      for (int dx = 0; dx < 2; ++dx) {
        const double w_x = dx ? wx : 1.0 - wx;
        const long xx = x0 + dx;
        if (w_x == 0.0 || xx < 0 || xx >= static_cast<long>(d.x)) continue;
        acc += w_x * w_y * w_z *
               t.values[static_cast<std::size_t>(xx) +
                        d.x * (static_cast<std::size_t>(yy) + d.y * static_cast<std::size_t>(zz))];
      }
    }
  }
  return static_cast<float>(acc);
}

using CoordMap = std::function<std::array<double, 3>(double, double, double)>;

ImageTensor warp(const ImageTensor& image, const CoordMap& source_of) {
  const Dims3 d = dims_of(image);
  ImageTensor out = image;
  std::size_t i = 0;
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x, ++i) {
        const auto s = source_of(static_cast<double>(x), static_cast<double>(y), static_cast<double>(z));
        out.values[i] = sample(image, d, s[0], s[1], s[2]);
      }
  return out;
}

std::array<double, 3> centers(const Dims3& d) {
  return {0.5 * static_cast<double>(d.x - 1), 0.5 * static_cast<double>(d.y - 1), 0.5 * static_cast<double>(d.z - 1)};
}

ImageTensor map_values(const ImageTensor& image, const std::function<float(float)>& f) {
  ImageTensor out = image;
  for (auto& v : out.values) v = f(v);
  return out;
}

// Piecewise-linear monotone map through (xs[k], ys[k]).
double piecewise(const std::vector<double>& xs, const std::vector<double>& ys, double t) {
  if (t <= xs.front()) return ys.front() + (t - xs.front());
  if (t >= xs.back()) return ys.back() + (t - xs.back());
  std::size_t k = 0;
  while (k + 2 < xs.size() && t > xs[k + 1]) ++k;
  const double span = xs[k + 1] - xs[k];
  if (span <= 0.0) return ys[k];
  return ys[k] + (t - xs[k]) * ((ys[k + 1] - ys[k]) / span);
}

}  // namespace

void AugmentConfig::validate() const {
  for (const TransformSpec* s : {&flip, &rotation, &rotation_3d, &zoom, &intensity_shift, &intensity_scale,
                                 &gaussian_noise, &contrast, &gaussian_smooth, &elastic, &grid_distortion,
                                 &histogram_shift}) {
    if (!(s->probability >= 0.0 && s->probability <= 1.0)) throw ConfigError("augmentation probability outside [0, 1]");
    if (!(s->lo <= s->hi)) throw ConfigError("augmentation range with lo > hi");
  }
  if (zoom.lo <= 0.0) throw ConfigError("zoom factors must be positive");
  if (gaussian_noise.lo < 0.0 || gaussian_smooth.lo < 0.0 || elastic.lo < 0.0) throw ConfigError("negative sigma/magnitude");
  if (contrast.lo <= 0.0) throw ConfigError("contrast gamma must be positive");
  if (grid_distortion.lo < 0.0 || grid_distortion.hi >= 0.5) throw ConfigError("grid jitter must lie in [0, 0.5)");
  if (elastic_grid_nodes < 2 || grid_cells < 1 || histogram_points < 2) throw ConfigError("augmentation grid too coarse");
}

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  for (TransformSpec* s : {&c.flip, &c.rotation, &c.rotation_3d, &c.zoom, &c.intensity_shift, &c.intensity_scale,
                           &c.gaussian_noise, &c.contrast, &c.gaussian_smooth, &c.elastic, &c.grid_distortion,
                           &c.histogram_shift}) {
    s->enabled = false;
    s->probability = 0.0;
  }
  return c;
}

namespace augment_ops {

ImageTensor flip(const ImageTensor& image, int axis) {
  const Dims3 d = dims_of(image);
  if (axis < 0 || axis >= d.rank) throw DataError("flip axis out of range");
  ImageTensor out = image;
  std::size_t i = 0;
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x, ++i) {
        std::size_t sx = x, sy = y, sz = z;
        if (axis == 0) sx = d.x - 1 - x;
        if (axis == 1) sy = d.y - 1 - y;
        if (axis == 2) sz = d.z - 1 - z;
        out.values[i] = image.values[sx + d.x * (sy + d.y * sz)];
      }
  return out;
}

ImageTensor rotate(const ImageTensor& image, const std::array<double, 3>& angles_deg) {
  const Dims3 d = dims_of(image);
  const auto c = centers(d);
  const double k = std::numbers::pi / 180.0;
  std::array<std::array<double, 3>, 3> r{};
  if (d.rank == 2) {
    const double ca = std::cos(angles_deg[0] * k);
    const double sa = std::sin(angles_deg[0] * k);
    r = {{{ca, -sa, 0.0}, {sa, ca, 0.0}, {0.0, 0.0, 1.0}}};
  } else {
    const double cx = std::cos(angles_deg[0] * k), sx = std::sin(angles_deg[0] * k);
    const double cy = std::cos(angles_deg[1] * k), sy = std::sin(angles_deg[1] * k);
    const double cz = std::cos(angles_deg[2] * k), sz = std::sin(angles_deg[2] * k);
    const double rx[3][3] = {{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}};
    const double ry[3][3] = {{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}};
    const double rz[3][3] = {{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}};
    double ryx[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        ryx[i][j] = 0.0;
        for (int m = 0; m < 3; ++m) ryx[i][j] += ry[i][m] * rx[m][j];
      }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int m = 0; m < 3; ++m) r[i][j] += rz[i][m] * ryx[m][j];
  }
  // Source = R^T (p - c) + c.
  return warp(image, [&](double x, double y, double z) {
    const double p[3] = {x - c[0], y - c[1], z - c[2]};
    std::array<double, 3> s{};
    for (int j = 0; j < 3; ++j) s[j] = r[0][j] * p[0] + r[1][j] * p[1] + r[2][j] * p[2] + c[j];
    if (d.rank == 2) s[2] = z;
    return s;
  });
}

ImageTensor zoom(const ImageTensor& image, double factor) {
  if (!(factor > 0.0)) throw DataError("zoom factor must be positive");
  const Dims3 d = dims_of(image);
  const auto c = centers(d);
  return warp(image, [&](double x, double y, double z) {
    return std::array<double, 3>{(x - c[0]) / factor + c[0], (y - c[1]) / factor + c[1],
                                 d.rank == 2 ? z : (z - c[2]) / factor + c[2]};
  });
}

ImageTensor shift_intensity(const ImageTensor& image, double offset) {
  return map_values(image, [offset](float v) { return static_cast<float>(v + offset); });
}

ImageTensor scale_intensity(const ImageTensor& image, double factor) {
  return map_values(image, [factor](float v) { return static_cast<float>(v * factor); });
}

ImageTensor add_gaussian_noise(const ImageTensor& image, double sigma, RandomStream& stream) {
  ImageTensor out = image;
  if (sigma == 0.0) return out;
  for (auto& v : out.values) v = static_cast<float>(v + sigma * stream.normal());
  return out;
}

ImageTensor adjust_contrast(const ImageTensor& image, double gamma) {
  return map_values(image, [gamma](float v) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<float>(gamma == 1.0 ? c : std::pow(c, gamma));
  });
}

ImageTensor gaussian_smooth(const ImageTensor& image, double sigma) {
  if (sigma <= 0.0) return image;
  const Dims3 d = dims_of(image);
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));

  ImageTensor cur = image;
  const std::array<std::size_t, 3> n{d.x, d.y, d.z};
  const std::array<std::size_t, 3> stride{1, d.x, d.x * d.y};
  for (int axis = 0; axis < d.rank; ++axis) {
    ImageTensor next = cur;
    std::size_t i = 0;
    for (std::size_t z = 0; z < d.z; ++z)
      for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t x = 0; x < d.x; ++x, ++i) {
          const std::array<std::size_t, 3> p{x, y, z};
          double acc = 0.0;
          double wsum = 0.0;
          for (int k = -radius; k <= radius; ++k) {
            const long q = static_cast<long>(p[axis]) + k;
            if (q < 0 || q >= static_cast<long>(n[axis])) continue;
            const double w = kernel[k + radius];
            acc += w * cur.values[i + (q - static_cast<long>(p[axis])) * static_cast<long>(stride[axis])];
            wsum += w;
          }
          next.values[i] = static_cast<float>(acc / wsum);
        }
    cur = std::move(next);
  }
  return cur;
}

ImageTensor elastic_deform(const ImageTensor& image, double magnitude, int nodes, RandomStream& stream) {
  if (magnitude == 0.0) return image;
  const Dims3 d = dims_of(image);
  const int gz = d.rank == 3 ? nodes : 1;
  const std::size_t node_count = static_cast<std::size_t>(nodes) * nodes * gz;
  std::vector<std::array<double, 3>> disp(node_count);
  for (auto& v : disp) {
    v[0] = magnitude * stream.uniform(-1.0, 1.0);
    v[1] = magnitude * stream.uniform(-1.0, 1.0);
    v[2] = d.rank == 3 ? magnitude * stream.uniform(-1.0, 1.0) : 0.0;
  }
  auto grid_coord = [nodes](double p, std::size_t n) {
    return n > 1 ? p * (nodes - 1) / static_cast<double>(n - 1) : 0.0;
  };
  auto node_at = [&](int i, int j, int k) -> const std::array<double, 3>& {
    return disp[static_cast<std::size_t>(i) + nodes * (static_cast<std::size_t>(j) + nodes * static_cast<std::size_t>(k))];
  };
  return warp(image, [&](double x, double y, double z) {
    const double g[3] = {grid_coord(x, d.x), grid_coord(y, d.y), d.rank == 3 ? grid_coord(z, d.z) : 0.0};
    int i0[3];
    double w[3];
    for (int a = 0; a < 3; ++a) {
      const int limit = (a == 2 ? gz : nodes) - 1;
      i0[a] = std::min(static_cast<int>(std::floor(g[a])), std::max(limit - 1, 0));
      w[a] = limit > 0 ? g[a] - i0[a] : 0.0;
    }
    std::array<double, 3> u{0.0, 0.0, 0.0};
    for (int dk = 0; dk < (gz > 1 ? 2 : 1); ++dk)
      for (int dj = 0; dj < 2; ++dj)
        for (int di = 0; di < 2; ++di) {
          const double wt = (di ? w[0] : 1 - w[0]) * (dj ? w[1] : 1 - w[1]) * (gz > 1 ? (dk ? w[2] : 1 - w[2]) : 1.0);
          const auto& v = node_at(i0[0] + di, i0[1] + dj, i0[2] + dk);
          for (int a = 0; a < 3; ++a) u[a] += wt * v[a];
        }
    return std::array<double, 3>{x + u[0], y + u[1], z + u[2]};
  });
}

ImageTensor grid_distort(const ImageTensor& image, double jitter, int cells, RandomStream& stream) {
  if (jitter == 0.0) return image;
  const Dims3 d = dims_of(image);
  const std::array<std::size_t, 3> n{d.x, d.y, d.z};
  // Per axis: uniform nodes xs over [0, n] in continuous coordinates, jittered interior nodes ys.
  std::array<std::vector<double>, 3> xs, ys;
  for (int a = 0; a < d.rank; ++a) {
    const double cell = static_cast<double>(n[a]) / cells;
    for (int k = 0; k <= cells; ++k) {
      xs[a].push_back(k * cell);
      ys[a].push_back(k * cell + ((k == 0 || k == cells) ? 0.0 : stream.uniform(-jitter, jitter) * cell));
    }
  }
  return warp(image, [&](double x, double y, double z) {
    std::array<double, 3> p{x, y, z};
    for (int a = 0; a < d.rank; ++a) p[a] = piecewise(xs[a], ys[a], p[a] + 0.5) - 0.5;
    return p;
  });
}

ImageTensor histogram_shift(const ImageTensor& image, double jitter, int points, RandomStream& stream) {
  if (jitter == 0.0 || image.values.empty()) return image;
  const auto [mn_it, mx_it] = std::minmax_element(image.values.begin(), image.values.end());
  const double mn = *mn_it;
  const double mx = *mx_it;
  if (!(mx > mn)) return image;
  std::vector<double> xs(points), ys(points);
  for (int k = 0; k < points; ++k) {
    xs[k] = mn + (mx - mn) * k / (points - 1);
    ys[k] = xs[k];
    if (k > 0 && k < points - 1) ys[k] = std::clamp(xs[k] + stream.uniform(-jitter, jitter) * (mx - mn), mn, mx);
  }
  std::sort(ys.begin(), ys.end());
  return map_values(image, [&](float v) { return static_cast<float>(piecewise(xs, ys, v)); });
}

}  // namespace augment_ops

ImageTensor apply_pipeline(const ImageTensor& image, const AugmentConfig& config, RandomStream& stream) {
  ++g_invocations;
  const Dims3 d = dims_of(image);
  for (float v : image.values)
    if (!std::isfinite(v)) throw DataError("augmentation input contains a non-finite value");

  auto fires = [&](const TransformSpec& s) {
    const double u = stream.uniform();
    return s.enabled && u < s.probability;
  };
  auto draw = [&](const TransformSpec& s) { return stream.uniform(s.lo, s.hi); };

  ImageTensor out = image;
  for (int axis = 0; axis < d.rank; ++axis)
    if (fires(config.flip)) out = augment_ops::flip(out, axis);

  const TransformSpec& rot = d.rank == 2 ? config.rotation : config.rotation_3d;
  if (fires(rot)) {
    std::array<double, 3> angles{draw(rot), 0.0, 0.0};
    if (d.rank == 3) {
      angles[1] = draw(rot);
      angles[2] = draw(rot);
    }
    out = augment_ops::rotate(out, angles);
  }
  if (fires(config.zoom)) out = augment_ops::zoom(out, draw(config.zoom));
  if (fires(config.intensity_shift)) out = augment_ops::shift_intensity(out, draw(config.intensity_shift));
  if (fires(config.intensity_scale)) out = augment_ops::scale_intensity(out, draw(config.intensity_scale));
  if (fires(config.gaussian_noise)) out = augment_ops::add_gaussian_noise(out, draw(config.gaussian_noise), stream);
  if (fires(config.contrast)) out = augment_ops::adjust_contrast(out, draw(config.contrast));
  if (fires(config.gaussian_smooth)) out = augment_ops::gaussian_smooth(out, draw(config.gaussian_smooth));
  if (fires(config.elastic))
    out = augment_ops::elastic_deform(out, draw(config.elastic), config.elastic_grid_nodes, stream);
  if (fires(config.grid_distortion))
    out = augment_ops::grid_distort(out, draw(config.grid_distortion), config.grid_cells, stream);
  if (fires(config.histogram_shift))
    out = augment_ops::histogram_shift(out, draw(config.histogram_shift), config.histogram_points, stream);
  return out;
}

std::uint64_t augment_invocation_count() { return g_invocations.load(); }

}  // namespace gliopipe
