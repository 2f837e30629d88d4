#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "gliopipe/error.hpp"
#include "gliopipe/volume_io.hpp"
#include "test_support.hpp"

using namespace gliopipe;

namespace {

// Writes a NIfTI-1 header field by field, independent of the library writer.
struct Fixture {
  std::vector<std::uint8_t> bytes = std::vector<std::uint8_t>(352, 0);
  bool big = false;

  template <typename T>
  void put(std::size_t off, T v) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if (big) std::reverse(b, b + sizeof(T));
    if (off + sizeof(T) > bytes.size()) bytes.resize(off + sizeof(T), 0);
    std::memcpy(bytes.data() + off, b, sizeof(T));
  }
};

std::vector<std::uint8_t> float_fixture(bool big, float slope, float inter, const char* magic = "n+1") {
  Fixture f;
  f.big = big;
  f.put<std::int32_t>(0, 348);
  const std::int16_t dim[8] = {3, 2, 2, 2, 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) f.put<std::int16_t>(40 + 2 * i, dim[i]);
  f.put<std::int16_t>(70, 16);
  f.put<std::int16_t>(72, 32);
  const float pixdim[8] = {1, 1, 1, 1, 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) f.put<float>(76 + 4 * i, pixdim[i]);
  f.put<float>(108, 352.0F);
  f.put<float>(112, slope);
  f.put<float>(116, inter);
  std::memcpy(f.bytes.data() + 344, magic, 4);
  for (int i = 0; i < 8; ++i) f.put<float>(352 + 4 * i, static_cast<float>(i));
  REQUIRE(f.bytes.size() == 384);
  return f.bytes;
}

VolumeGrid random_grid(std::array<std::size_t, 3> shape, unsigned seed, bool integral) {
  VolumeGrid g(shape);
  std::uint32_t s = seed;
  for (auto& v : g.values) {
    s = s * 1664525u + 1013904223u;
    v = integral ? static_cast<float>(static_cast<int>(s >> 24) - 60) : static_cast<float>((s >> 8) * 1e-5 - 40.0);
  }
  g.spacing = {0.9F, 1.0F, 1.2F};
  return g;
}

}  // namespace

TEST_CASE("handcrafted float32 fixture") {
  const auto le = float_fixture(false, 0.0F, 0.0F);
  const VolumeGrid g = parse_nifti(le);
  CHECK(g.shape == std::array<std::size_t, 3>{2, 2, 2});
  for (int i = 0; i < 8; ++i) CHECK(g.values[i] == static_cast<float>(i));

  SUBCASE("big-endian copy parses to the same values") {
    const auto be = float_fixture(true, 0.0F, 0.0F);
    std::int32_t first;
    std::memcpy(&first, be.data(), 4);
    CHECK(first == 1543569408);
    CHECK(parse_nifti(be).values == g.values);
  }
  SUBCASE("scl_slope and scl_inter apply exactly") {
    const VolumeGrid s = parse_nifti(float_fixture(false, 2.0F, 1.0F));
    for (int i = 0; i < 8; ++i) CHECK(s.values[i] == static_cast<float>(2 * i + 1));
  }
  SUBCASE("bad magic is rejected") { CHECK_THROWS_AS(parse_nifti(float_fixture(false, 0, 0, "abc")), DataError); }
  SUBCASE("truncated data is rejected") {
    auto t = le;
    t.resize(370);
    CHECK_THROWS_AS(parse_nifti(t), DataError);
  }
  SUBCASE("gzip wrapping") { CHECK(parse_nifti(gzip_compress(le)).values == g.values); }
}

TEST_CASE("NaN policy") {
  VolumeGrid g({2, 1, 1});
  g.values = {1.0F, std::numeric_limits<float>::quiet_NaN()};
  const auto bytes = encode_nifti(g);
  CHECK_THROWS_AS(parse_nifti(bytes), DataError);
  const VolumeGrid z = parse_nifti(bytes, NanPolicy::zero);
  CHECK(z.values[1] == 0.0F);
}

TEST_CASE("writer round-trip for every datatype and both byte orders") {
  for (auto dt : {NiftiDatatype::uint8, NiftiDatatype::int16, NiftiDatatype::int32, NiftiDatatype::float32,
                  NiftiDatatype::float64}) {
    for (bool big : {false, true}) {
      VolumeGrid g = random_grid({5, 4, 3}, 17, dt != NiftiDatatype::float32 && dt != NiftiDatatype::float64);
      if (dt == NiftiDatatype::uint8)
        for (auto& v : g.values) v = std::abs(v);
      NiftiWriteOptions o;
      o.datatype = dt;
      o.big_endian = big;
      const VolumeGrid back = parse_nifti(encode_nifti(g, o));
      CHECK(back.shape == g.shape);
      CHECK(back.values == g.values);
      CHECK(back.spacing == g.spacing);
    }
  }
  SUBCASE("scaled int16") {
    VolumeGrid g = random_grid({3, 3, 3}, 5, true);
    for (auto& v : g.values) v = v * 0.5F + 3.0F;
    NiftiWriteOptions o;
    o.datatype = NiftiDatatype::int16;
    o.scl_slope = 0.5F;
    o.scl_inter = 3.0F;
    CHECK(parse_nifti(encode_nifti(g, o)).values == g.values);
  }
}

TEST_CASE("file round-trip through .nii and .nii.gz") {
  TempDir dir("nifti");
  const VolumeGrid g = random_grid({6, 5, 4}, 3, false);
  write_nifti(g, dir / "a.nii");
  write_nifti(g, dir / "a.nii.gz");
  CHECK(read_nifti(dir / "a.nii").values == g.values);
  CHECK(read_nifti(dir / "a.nii.gz").values == g.values);
}

TEST_CASE("mask canonicalization") {
  VolumeGrid raw({3, 1, 1});
  raw.values = {1, 2, 4};
  const SegmentationMask m = canonicalize_mask(raw);
  CHECK(m.labels == std::vector<std::uint8_t>{1, 2, 3});
  raw.values = {0, 1, 2};
  CHECK(canonicalize_mask(raw, {{0, 0}, {1, 1}, {2, 2}, {3, 3}}).labels == std::vector<std::uint8_t>{0, 1, 2});
  raw.values = {0, 5, 1};
  try {
    canonicalize_mask(raw);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("unmapped code 5") != std::string::npos);
  }
}

TEST_CASE("mismatched mask and volume are rejected") {
  VolumeGrid v({4, 4, 4});
  SegmentationMask m({4, 4, 3});
  CHECK_THROWS_AS(require_same_grid(v, m), DataError);
}

TEST_CASE("ITF cache format") {
  ImageTensor t;
  t.dims = {3, 2};
  t.spacing = {1.0F, 0.5F};
  t.values = {0.1F, -2.0F, 3.5F, 1e-7F, 8.0F, 0.0F};
  auto bytes = encode_itf(t);
  const ImageTensor back = decode_itf(bytes);
  CHECK(back.dims == t.dims);
  CHECK(back.values == t.values);

  SUBCASE("minimal size") {
    ImageTensor one;
    one.dims = {1, 1, 1};
    one.spacing = {1, 1, 1};
    one.values = {0.0F};
    // magic + ndim + 3 dims + 3 spacings + 1 value + crc
    CHECK(encode_itf(one).size() == 4 + 4 + 12 + 12 + 4 + 4);
  }
  SUBCASE("flipped final byte") {
    bytes.back() ^= 0x01;
    CHECK_THROWS_WITH_AS(decode_itf(bytes), doctest::Contains("checksum"), DataError);
  }
}
