#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gliopipe/dataset.hpp"
#include "gliopipe/volume_io.hpp"

namespace gliopipe {

struct PhantomConfig {
  std::size_t n_patients = 100;
  std::size_t grid = 64;
  double class_balance = 0.5;
  double rim_fraction_pos = 0.35;
  double rim_fraction_neg = 0.15;
  double texture_sigma_pos = 0.10;
  double texture_sigma_neg = 0.05;
  bool null_task = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// Tumor layout in normalized ellipsoid radius rho:
//   necrotic core        rho <= kShellOuter * (1 - rim)
//   enhancing shell      kShellOuter * (1 - rim) < rho <= kShellOuter
//   FLAIR halo           kShellOuter < rho <= 1
inline constexpr double kShellOuter = 0.7;
inline constexpr double kSemiAxisMin = 8.0;
inline constexpr double kSemiAxisMax = 16.0;

// Contrast profiles (base intensities before texture noise).
inline constexpr double kCoreIntensity = 60.0;
inline constexpr double kShellIntensity = 100.0;
inline constexpr double kHaloIntensity = 80.0;
inline constexpr double kBackgroundIntensity = 20.0;
inline constexpr double kT1cShellGain = 1.8;
inline constexpr double kFlairHaloGain = 1.6;

struct PhantomPatient {
  std::string patient_id;
  int recorded_label = 0;  // the label written to the manifest
  int image_label = 0;     // the class the images were drawn from
  std::array<double, 3> semi_axes{};
  std::array<double, 3> center{};
  double rim_fraction = 0.0;
  VolumeGrid t1, t1c, flair;
  VolumeGrid seg;  // raw codes {0, 1, 2, 4}
};

/// Pure function of (config, index).
PhantomPatient generate_patient(const PhantomConfig& config, std::size_t index);

struct GeneratedCohort {
  Manifest manifest;
  std::filesystem::path manifest_path;
};

/// Writes <out_dir>/manifest.csv and float32 .nii.gz volumes per patient.
/// Signal cohorts record idh_status; null cohorts record mgmt_index.
GeneratedCohort generate_cohort(const PhantomConfig& config, const std::filesystem::path& out_dir);

}  // namespace gliopipe
