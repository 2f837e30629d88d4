#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gliopipe/dataset.hpp"
#include "gliopipe/volume_io.hpp"

namespace gliopipe {

/// Anatomical views: axial planes are normal to z, coronal to y, sagittal to x.
enum class View { axial, coronal, sagittal };
inline constexpr std::array<View, 3> kAllViews{View::axial, View::coronal, View::sagittal};
std::string_view to_string(View v);
View parse_view(std::string_view s);

struct IntensityRange {
  float lo;
  float hi;
};

/// Allocated output interval per tumor subregion, indexed by canonical code - 1.
struct SubregionRanges {
  std::array<IntensityRange, 3> ranges{{{1.0F / 24, 8.0F / 24}, {9.0F / 24, 16.0F / 24}, {17.0F / 24, 1.0F}}};

  const IntensityRange& of(Subregion s) const { return ranges[static_cast<int>(s) - 1]; }
  void validate() const;
};

/// Mask-extracted volume, zero outside the tumor.
struct EncodedVolume {
  VolumeGrid grid;
};

EncodedVolume encode_subregions(const VolumeGrid& volume, const SegmentationMask& mask,
                                const SubregionRanges& ranges = {});

std::size_t largest_slice_index(const SegmentationMask& mask, View view);

struct Box2 {
  std::size_t u0, u1, v0, v1;  // inclusive
};

struct Box3 {
  std::array<std::size_t, 3> lo;
  std::array<std::size_t, 3> hi;  // inclusive
};

struct ViewSlice {
  ImageTensor image;  // dims {target, target}
  std::size_t slice_index = 0;
  Box2 crop{};
};

ViewSlice extract_view_slice(const EncodedVolume& encoded, const SegmentationMask& mask, View view,
                             std::size_t target_size, std::size_t margin = 2);

struct SliceTriplet {
  std::array<ViewSlice, 3> views;  // axial, coronal, sagittal

  const ViewSlice& operator[](View v) const { return views[static_cast<int>(v)]; }
};

SliceTriplet extract_slice_triplet(const EncodedVolume& encoded, const SegmentationMask& mask,
                                   std::size_t target_size, std::size_t margin = 2);

struct VolumeInput {
  ImageTensor image;  // dims {target, target, target}
  Box3 bbox{};
};

VolumeInput extract_volume_input(const EncodedVolume& encoded, const SegmentationMask& mask,
                                 std::size_t target_size, std::size_t margin = 2);

/// Multilinear resampling of a rank-2 or rank-3 tensor, align-corners = false:
/// output sample i reads source coordinate (i + 0.5) * in / out - 0.5, clamped to the edges.
ImageTensor resize_linear(const ImageTensor& input, const std::vector<std::size_t>& out_dims);

struct PreprocessConfig {
  SubregionRanges ranges;
  std::size_t size_2d = 224;
  std::size_t size_3d = 96;
  std::size_t margin = 2;
  LabelMap label_map = default_label_map();
  NanPolicy nan_policy = NanPolicy::reject;

  /// Canonical text of every field that changes preprocessed output.
  std::string fingerprint() const;
  std::string hash() const;
};

/// On-disk ITF cache keyed by (patient, sequence, view|volume, config hash).
/// A default-constructed cache (empty root) is disabled.
class PreprocessCache {
 public:
  PreprocessCache() = default;
  explicit PreprocessCache(std::filesystem::path root) : root_(std::move(root)) {}

  /// Root from the GLIOPIPE_CACHE environment variable, or `fallback` when unset.
  static std::filesystem::path root_from_env(const std::filesystem::path& fallback = {});

  bool enabled() const { return !root_.empty(); }
  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path entry_path(const std::string& patient_id, Sequence seq, const std::string& item,
                                   const std::string& config_hash) const;

  std::optional<ImageTensor> load(const std::filesystem::path& entry);
  void store(const std::filesystem::path& entry, const ImageTensor& tensor);

  std::size_t hits() const { return hits_.load(); }
  std::size_t misses() const { return misses_.load(); }

 private:
  std::filesystem::path root_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

struct PatientInputs {
  std::optional<std::array<ImageTensor, 3>> views;  // axial, coronal, sagittal
  std::optional<ImageTensor> volume;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
};

/// Loads (or fetches from cache) the network inputs for one patient and sequence.
PatientInputs prepare_patient_inputs(const PatientRecord& record, Sequence sequence, const PreprocessConfig& config,
                                     bool want_views, bool want_volume, PreprocessCache& cache);

}  // namespace gliopipe
