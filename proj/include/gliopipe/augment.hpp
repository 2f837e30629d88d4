#pragma once

#include <array>
#include <cstdint>

#include "gliopipe/random.hpp"
#include "gliopipe/volume_io.hpp"

namespace gliopipe {

/// One transform's switch, firing probability, and magnitude range.
struct TransformSpec {
  bool enabled = true;
  double probability = 0.2;
  double lo = 0.0;
  double hi = 0.0;
};

/// Label-free by construction: nothing here can depend on the class of a sample.
struct AugmentConfig {
  TransformSpec flip{true, 0.5, 0.0, 0.0};              // per axis
  TransformSpec rotation{true, 0.2, -15.0, 15.0};       // degrees, 2D in-plane
  TransformSpec rotation_3d{true, 0.2, -10.0, 10.0};    // degrees, about each axis
  TransformSpec zoom{true, 0.2, 0.9, 1.1};
  TransformSpec intensity_shift{true, 0.2, -0.1, 0.1};
  TransformSpec intensity_scale{true, 0.2, 0.9, 1.1};
  TransformSpec gaussian_noise{true, 0.2, 0.0, 0.05};   // sigma
  TransformSpec contrast{true, 0.2, 0.7, 1.5};          // gamma
  TransformSpec gaussian_smooth{true, 0.2, 0.25, 1.0};  // sigma, voxels
  TransformSpec elastic{true, 0.2, 0.0, 2.0};           // displacement magnitude, voxels
  TransformSpec grid_distortion{true, 0.2, 0.2, 0.2};   // node jitter amplitude, fraction of a cell
  TransformSpec histogram_shift{true, 0.2, 0.05, 0.05};  // control-point jitter amplitude

  int elastic_grid_nodes = 4;
  int grid_cells = 4;
  int histogram_points = 5;
  std::uint64_t master_seed = 0;

  void validate() const;
  /// Every transform disabled.
  static AugmentConfig identity();
};

/// Applies the enabled transforms in fixed order (flip, rotation, zoom,
/// intensity shift, intensity scale, gaussian noise, contrast, gaussian smooth,
/// elastic deformation, grid distortion, histogram shift). Output shape equals
/// input shape; geometric warps resample onto the input grid with zero fill.
ImageTensor apply_pipeline(const ImageTensor& image, const AugmentConfig& config, RandomStream& stream);

/// Number of apply_pipeline calls in this process (used to audit that
/// evaluation paths never augment).
std::uint64_t augment_invocation_count();

namespace augment_ops {

ImageTensor flip(const ImageTensor& image, int axis);
/// angles in degrees: 2D uses angles[0]; 3D rotates about x, y, then z.
ImageTensor rotate(const ImageTensor& image, const std::array<double, 3>& angles_deg);
ImageTensor zoom(const ImageTensor& image, double factor);
ImageTensor shift_intensity(const ImageTensor& image, double offset);
ImageTensor scale_intensity(const ImageTensor& image, double factor);
ImageTensor add_gaussian_noise(const ImageTensor& image, double sigma, RandomStream& stream);
ImageTensor adjust_contrast(const ImageTensor& image, double gamma);
ImageTensor gaussian_smooth(const ImageTensor& image, double sigma);
ImageTensor elastic_deform(const ImageTensor& image, double magnitude, int nodes, RandomStream& stream);
ImageTensor grid_distort(const ImageTensor& image, double jitter, int cells, RandomStream& stream);
ImageTensor histogram_shift(const ImageTensor& image, double jitter, int points, RandomStream& stream);

}  // namespace augment_ops

}  // namespace gliopipe
