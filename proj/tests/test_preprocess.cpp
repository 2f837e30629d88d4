#include <doctest.h>

#include <cmath>

#include "gliopipe/error.hpp"
#include "gliopipe/preprocess.hpp"
#include "gliopipe/random.hpp"
#include "test_support.hpp"

using namespace gliopipe;

namespace {

// Per-plane count written out directly, smallest index on ties.
std::size_t brute_argmax(const SegmentationMask& m, int axis) {
  std::size_t best = 0, best_count = 0;
  for (std::size_t s = 0; s < m.shape[axis]; ++s) {
    std::size_t c = 0;
    for (std::size_t z = 0; z < m.shape[2]; ++z)
      for (std::size_t y = 0; y < m.shape[1]; ++y)
        for (std::size_t x = 0; x < m.shape[0]; ++x) {
          const std::size_t p[3] = {x, y, z};
          if (p[axis] == s && m.at(x, y, z) != 0) ++c;
        }
    if (c > best_count) {
      best_count = c;
      best = s;
    }
  }
  return best;
}

SegmentationMask ellipsoid_mask(std::array<std::size_t, 3> shape, std::array<double, 3> c, std::array<double, 3> r) {
  SegmentationMask m(shape);
  for (std::size_t z = 0; z < shape[2]; ++z)
    for (std::size_t y = 0; y < shape[1]; ++y)
      for (std::size_t x = 0; x < shape[0]; ++x) {
        const double d = std::pow((x - c[0]) / r[0], 2) + std::pow((y - c[1]) / r[1], 2) + std::pow((z - c[2]) / r[2], 2);
        if (d <= 1.0) m.at(x, y, z) = d < 0.3 ? 1 : (d < 0.6 ? 3 : 2);
      }
  return m;
}

ImageTensor tensor2(std::size_t nx, std::size_t ny, std::vector<float> v) {
  ImageTensor t;
  t.dims = {nx, ny};
  t.spacing = {1, 1};
  t.values = std::move(v);
  return t;
}

}  // namespace

TEST_CASE("subregion encoding") {
  VolumeGrid vol({4, 1, 1});
  SegmentationMask mask({4, 1, 1});
  vol.values = {10, 20, 15, 999};
  mask.labels = {1, 1, 1, 0};
  const auto enc = encode_subregions(vol, mask).grid.values;
  CHECK(enc[0] == doctest::Approx(1.0 / 24).epsilon(1e-6));
  CHECK(enc[1] == doctest::Approx(8.0 / 24).epsilon(1e-6));
  CHECK(enc[2] == doctest::Approx(4.5 / 24).epsilon(1e-6));
  CHECK(enc[3] == 0.0F);

  SUBCASE("constant region maps to its midpoint") {
    vol.values = {500, 500, 500, 0};
    mask.labels = {3, 3, 3, 0};
    for (int i = 0; i < 3; ++i) CHECK(encode_subregions(vol, mask).grid.values[i] == doctest::Approx(41.0 / 48));
  }
  SUBCASE("shape mismatch") {
    SegmentationMask bad({3, 1, 1});
    CHECK_THROWS_AS(encode_subregions(vol, bad), DataError);
  }
}

TEST_CASE("encoding properties on random volumes") {
  RandomStream rs(11);
  const SubregionRanges ranges;
  for (int trial = 0; trial < 20; ++trial) {
    VolumeGrid vol({9, 8, 7});
    SegmentationMask mask({9, 8, 7});
    for (std::size_t i = 0; i < vol.values.size(); ++i) {
      vol.values[i] = static_cast<float>(rs.uniform(-50, 300));
      mask.labels[i] = static_cast<std::uint8_t>(rs.below(4));
    }
    const auto enc = encode_subregions(vol, mask).grid.values;
    VolumeGrid moved = vol;
    for (auto& v : moved.values) v = 2 * v + 3;
    const auto enc2 = encode_subregions(moved, mask).grid.values;
    for (std::size_t i = 0; i < enc.size(); ++i) {
      const int s = mask.labels[i];
      if (s == 0) {
        CHECK(enc[i] == 0.0F);
        continue;
      }
      CHECK(enc[i] != 0.0F);
      CHECK(enc[i] >= ranges.ranges[s - 1].lo);
      CHECK(enc[i] <= ranges.ranges[s - 1].hi);
      CHECK(enc2[i] == doctest::Approx(enc[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("largest slice") {
  SegmentationMask one({10, 10, 10});
  one.at(3, 5, 7) = 1;
  CHECK(largest_slice_index(one, View::axial) == 7);
  CHECK(largest_slice_index(one, View::coronal) == 5);
  CHECK(largest_slice_index(one, View::sagittal) == 3);

  const SegmentationMask e = ellipsoid_mask({32, 32, 32}, {15, 14, 16}, {6, 8, 9});
  CHECK(largest_slice_index(e, View::axial) == 16);
  CHECK(largest_slice_index(e, View::axial) == brute_argmax(e, 2));

  SegmentationMask tie({6, 6, 12});
  for (std::size_t x = 0; x < 3; ++x) {
    tie.at(x, 1, 4) = 2;
    tie.at(x, 2, 9) = 2;
  }
  CHECK(largest_slice_index(tie, View::axial) == 4);

  SegmentationMask empty({4, 4, 4});
  CHECK_THROWS_AS(largest_slice_index(empty, View::axial), DataError);
}

TEST_CASE("largest slice matches brute force on random masks") {
  RandomStream rs(2024);
  const View views[3] = {View::sagittal, View::coronal, View::axial};
  int ties = 0;
  for (int trial = 0; trial < 200; ++trial) {
    SegmentationMask m({4 + rs.below(6), 4 + rs.below(6), 4 + rs.below(6)});
    const double p = trial % 4 == 0 ? 0.05 : 0.3;
    for (auto& l : m.labels) l = rs.bernoulli(p) ? static_cast<std::uint8_t>(1 + rs.below(3)) : 0;
    m.labels[rs.below(m.labels.size())] = 1;
    if (trial % 10 == 0) {
      // Copy plane 0 onto the last plane along z to force an exact tie.
      for (std::size_t y = 0; y < m.shape[1]; ++y)
        for (std::size_t x = 0; x < m.shape[0]; ++x) m.at(x, y, m.shape[2] - 1) = m.at(x, y, 0);
      ++ties;
    }
    for (int axis = 0; axis < 3; ++axis) CHECK(largest_slice_index(m, views[axis]) == brute_argmax(m, axis));
  }
  CHECK(ties == 20);
}

TEST_CASE("linear resize") {
  SUBCASE("bilinear 2x2 to 4x4: central samples average to the centre value") {
    const ImageTensor up = resize_linear(tensor2(2, 2, {0, 1, 1, 0}), {4, 4});
    auto at = [&](std::size_t x, std::size_t y) { return up.values[x + 4 * y]; };
    // source coordinates 0.25 and 0.75, weights evaluated by hand
    CHECK(at(1, 1) == doctest::Approx(0.375));
    CHECK(at(2, 1) == doctest::Approx(0.625));
    CHECK(at(1, 2) == doctest::Approx(0.625));
    CHECK(at(2, 2) == doctest::Approx(0.375));
    CHECK((at(1, 1) + at(2, 1) + at(1, 2) + at(2, 2)) / 4 == doctest::Approx(0.5));
  }
  SUBCASE("trilinear 2x2x2 to 8x8x8: the centre equals the corner mean") {
    ImageTensor t;
    t.dims = {2, 2, 2};
    t.spacing = {1, 1, 1};
    t.values = {0, 1, 1, 0, 1, 0, 0, 1};
    const ImageTensor up = resize_linear(t, {8, 8, 8});
    double centre = 0;
    for (std::size_t z : {3, 4})
      for (std::size_t y : {3, 4})
        for (std::size_t x : {3, 4}) centre += up.values[x + 8 * (y + 8 * z)];
    CHECK(centre / 8 == doctest::Approx(0.5));
  }
  SUBCASE("identity and constants") {
    const ImageTensor a = tensor2(3, 2, {1, 2, 3, 4, 5, 6});
    CHECK(resize_linear(a, {3, 2}).values == a.values);
    const ImageTensor c = tensor2(5, 7, std::vector<float>(35, 0.3F));
    for (float v : resize_linear(c, {11, 3}).values) CHECK(v == doctest::Approx(0.3F));
    const ImageTensor down = resize_linear(resize_linear(c, {13, 17}), {5, 7});
    for (float v : down.values) CHECK(std::abs(v - 0.3F) < 1e-6);
  }
  SUBCASE("one-pixel column broadcasts") {
    const ImageTensor col = resize_linear(tensor2(1, 3, {0.2F, 0.5F, 0.8F}), {4, 3});
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 1; x < 4; ++x) CHECK(col.values[x + 4 * y] == col.values[4 * y]);
  }
}

TEST_CASE("view slices and volume crops") {
  VolumeGrid vol({20, 20, 20});
  const SegmentationMask m = ellipsoid_mask({20, 20, 20}, {10, 9, 11}, {4, 5, 3});
  RandomStream rs(5);
  for (auto& v : vol.values) v = static_cast<float>(rs.uniform(0, 100));
  const EncodedVolume enc = encode_subregions(vol, m);

  SUBCASE("crop already at target size, margin 0") {
    const ViewSlice s = extract_view_slice(enc, m, View::axial, 9, 0);
    CHECK(s.crop.u1 - s.crop.u0 + 1 == 9);
    CHECK(s.crop.v1 - s.crop.v0 + 1 == 11);
    const ViewSlice exact = extract_view_slice(enc, m, View::axial, 9, 0);
    CHECK(exact.image.dims == std::vector<std::size_t>{9, 9});
  }
  SUBCASE("identity volume resample is bitwise") {
    SegmentationMask cube({12, 12, 12});
    for (std::size_t z = 3; z < 8; ++z)
      for (std::size_t y = 3; y < 8; ++y)
        for (std::size_t x = 3; x < 8; ++x) cube.at(x, y, z) = 1;
    VolumeGrid v2({12, 12, 12});
    for (auto& v : v2.values) v = static_cast<float>(rs.uniform(0, 1));
    const EncodedVolume e2 = encode_subregions(v2, cube);
    const VolumeInput in = extract_volume_input(e2, cube, 5, 0);
    for (std::size_t z = 0; z < 5; ++z)
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 5; ++x)
          CHECK(in.image.values[x + 5 * (y + 5 * z)] == e2.grid.at(x + 3, y + 3, z + 3));
  }
  SUBCASE("slice shapes and range") {
    const SliceTriplet t = extract_slice_triplet(enc, m, 32);
    for (const auto& v : t.views) {
      CHECK(v.image.dims == std::vector<std::size_t>{32, 32});
      for (float x : v.image.values) {
        CHECK(x >= 0.0F);
        CHECK(x <= 1.0F);
      }
    }
    const VolumeInput in = extract_volume_input(enc, m, 16);
    CHECK(in.image.dims == std::vector<std::size_t>{16, 16, 16});
  }
}

TEST_CASE("preprocess cache") {
  TempDir dir("pre");
  VolumeGrid vol({24, 24, 24});
  RandomStream rs(1);
  for (auto& v : vol.values) v = static_cast<float>(rs.uniform(0, 100));
  VolumeGrid seg = mask_to_grid(ellipsoid_mask({24, 24, 24}, {12, 12, 12}, {5, 6, 4}));
  for (auto& v : seg.values)
    if (v == 3) v = 4;
  write_nifti(vol, dir / "t1.nii.gz");
  write_nifti(seg, dir / "seg.nii.gz");
  PatientRecord rec;
  rec.patient_id = "P1";
  rec.path_t1 = rec.path_t1c = rec.path_flair = dir / "t1.nii.gz";
  rec.path_seg = dir / "seg.nii.gz";
  PreprocessConfig cfg;
  cfg.size_2d = 32;
  cfg.size_3d = 32;
  PreprocessCache cache(dir / "cache");
  const PatientInputs a = prepare_patient_inputs(rec, Sequence::t1, cfg, true, true, cache);
  CHECK(a.cache_misses == 4);
  CHECK(a.cache_hits == 0);
  const PatientInputs b = prepare_patient_inputs(rec, Sequence::t1, cfg, true, true, cache);
  CHECK(b.cache_hits == 4);
  CHECK(b.cache_misses == 0);
  for (int v = 0; v < 3; ++v) CHECK((*b.views)[v].values == (*a.views)[v].values);
  CHECK(b.volume->values == a.volume->values);

  cfg.margin = 3;
  const PatientInputs c = prepare_patient_inputs(rec, Sequence::t1, cfg, true, false, cache);
  CHECK(c.cache_misses == 3);
}
