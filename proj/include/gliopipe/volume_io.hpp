#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gliopipe {

using Affine = std::array<std::array<double, 4>, 3>;

/// One MRI sequence on a regular grid; values are x-fastest.
struct VolumeGrid {
  std::array<std::size_t, 3> shape{0, 0, 0};
  std::array<float, 3> spacing{1.0F, 1.0F, 1.0F};
  std::vector<float> values;
  std::optional<Affine> orientation;

  VolumeGrid() = default;
  VolumeGrid(std::array<std::size_t, 3> shape, float fill = 0.0F);

  std::size_t voxel_count() const { return shape[0] * shape[1] * shape[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + shape[0] * (y + shape[1] * z); }
  float& at(std::size_t x, std::size_t y, std::size_t z) { return values[index(x, y, z)]; }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return values[index(x, y, z)]; }
};

/// Canonical subregion codes.
enum class Subregion : std::uint8_t { background = 0, necrotic = 1, flair_abnormality = 2, enhancing = 3 };

struct SegmentationMask {
  std::array<std::size_t, 3> shape{0, 0, 0};
  std::array<float, 3> spacing{1.0F, 1.0F, 1.0F};
  std::vector<std::uint8_t> labels;

  SegmentationMask() = default;
  explicit SegmentationMask(std::array<std::size_t, 3> shape);

  std::size_t voxel_count() const { return shape[0] * shape[1] * shape[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + shape[0] * (y + shape[1] * z); }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t z) { return labels[index(x, y, z)]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const { return labels[index(x, y, z)]; }
  std::size_t nonzero_count() const;
};

enum class NanPolicy { reject, zero };

enum class NiftiDatatype : std::int16_t {
  uint8 = 2,
  int16 = 4,
  int32 = 8,
  float32 = 16,
  float64 = 64,
};

VolumeGrid read_nifti(const std::filesystem::path& path, NanPolicy nan_policy = NanPolicy::reject);
/// Parses an in-memory single-file NIfTI-1 image (plain or gzip-wrapped).
VolumeGrid parse_nifti(std::span<const std::uint8_t> bytes, NanPolicy nan_policy = NanPolicy::reject);

struct NiftiWriteOptions {
  NiftiDatatype datatype = NiftiDatatype::float32;
  bool big_endian = false;
  float scl_slope = 0.0F;
  float scl_inter = 0.0F;
};

/// Reference writer: stored values are (v - scl_inter) / scl_slope when slope != 0,
/// rounded for integer datatypes.
std::vector<std::uint8_t> encode_nifti(const VolumeGrid& grid, const NiftiWriteOptions& options = {});
/// Writes .nii, or gzip-compressed when the path ends in ".gz".
void write_nifti(const VolumeGrid& grid, const std::filesystem::path& path, const NiftiWriteOptions& options = {});

using LabelMap = std::map<int, int>;

/// {0->0, 1->1, 2->2, 4->3}
const LabelMap& default_label_map();

SegmentationMask canonicalize_mask(const VolumeGrid& raw, const LabelMap& label_map = default_label_map());
VolumeGrid mask_to_grid(const SegmentationMask& mask);

void require_same_grid(const VolumeGrid& volume, const SegmentationMask& mask);

/// Dense float tensor of rank 2 or 3 (x-fastest), used for slices, volumes, and the cache.
struct ImageTensor {
  std::vector<std::size_t> dims;
  std::vector<float> spacing;
  std::vector<float> values;

  std::size_t element_count() const;
};

ImageTensor to_tensor(const VolumeGrid& grid);
VolumeGrid to_volume(const ImageTensor& tensor);

/// ITF layout: "ITF1", u32 ndim, u32 dims[ndim], f32 spacing[ndim],
/// little-endian f32 payload, u32 CRC-32 of the payload bytes.
std::vector<std::uint8_t> encode_itf(const ImageTensor& tensor);
ImageTensor decode_itf(std::span<const std::uint8_t> bytes);
void write_itf(const ImageTensor& tensor, const std::filesystem::path& path);
ImageTensor read_itf(const std::filesystem::path& path);

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes, int level = 6);
std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes);

}  // namespace gliopipe
