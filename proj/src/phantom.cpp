#include "gliopipe/phantom.hpp"

#include <cmath>
#include <cstdio>

#include "gliopipe/error.hpp"
#include "gliopipe/random.hpp"

namespace gliopipe {

void PhantomConfig::validate() const {
  if (n_patients == 0) throw ConfigError("phantom: n_patients must be positive");
  if (grid < 32) throw ConfigError("phantom: grid must be at least 32");
  if (!(class_balance > 0.0 && class_balance < 1.0)) throw ConfigError("phantom: class balance must lie in (0,1)");
  for (double r : {rim_fraction_pos, rim_fraction_neg})
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("phantom: rim fractions must lie in (0,1)");
  for (double s : {texture_sigma_pos, texture_sigma_neg})
    if (!(s >= 0.0)) throw ConfigError("phantom: texture sigma must be non-negative");
  const double need = 2.0 * (kSemiAxisMax + 2.0) + 1.0;
  if (static_cast<double>(grid) < need)
    throw ConfigError("phantom: tumor cannot fit in a " + std::to_string(grid) + "^3 grid (needs " +
                      std::to_string(static_cast<int>(need)) + ")");
}

PhantomPatient generate_patient(const PhantomConfig& c, std::size_t index) {
  c.validate();
  RandomStream rs(mix_key(c.seed, 0xFA57C0DEULL, index));
  PhantomPatient p;
  char id[32];
  std::snprintf(id, sizeof id, "PH%04zu", index);
  p.patient_id = id;
  p.recorded_label = rs.bernoulli(c.class_balance) ? 1 : 0;
  const int latent = rs.bernoulli(c.class_balance) ? 1 : 0;
  p.image_label = c.null_task ? latent : p.recorded_label;

  const double margin = kSemiAxisMax + 2.0;
  const double g = static_cast<double>(c.grid);
  for (int a = 0; a < 3; ++a) p.semi_axes[static_cast<std::size_t>(a)] = rs.uniform(kSemiAxisMin, kSemiAxisMax);
  for (int a = 0; a < 3; ++a) p.center[static_cast<std::size_t>(a)] = rs.uniform(margin, g - 1.0 - margin);
  p.rim_fraction = p.image_label == 1 ? c.rim_fraction_pos : c.rim_fraction_neg;
  const double sigma = p.image_label == 1 ? c.texture_sigma_pos : c.texture_sigma_neg;
  const double inner = kShellOuter * (1.0 - p.rim_fraction);

  const std::array<std::size_t, 3> shape{c.grid, c.grid, c.grid};
  p.seg = VolumeGrid(shape, 0.0F);
  p.t1 = VolumeGrid(shape, 0.0F);
  p.t1c = VolumeGrid(shape, 0.0F);
  p.flair = VolumeGrid(shape, 0.0F);
  RandomStream n1(mix_key(rs.next_u64(), 1)), n2(mix_key(rs.next_u64(), 2)), n3(mix_key(rs.next_u64(), 3));
  for (std::size_t z = 0; z < c.grid; ++z)
    for (std::size_t y = 0; y < c.grid; ++y)
      for (std::size_t x = 0; x < c.grid; ++x) {
        const double dx = (static_cast<double>(x) - p.center[0]) / p.semi_axes[0];
        const double dy = (static_cast<double>(y) - p.center[1]) / p.semi_axes[1];
        const double dz = (static_cast<double>(z) - p.center[2]) / p.semi_axes[2];
        const double rho = std::sqrt(dx * dx + dy * dy + dz * dz);
        int code = 0;
        double base = kBackgroundIntensity, t1c_gain = 1.0, flair_gain = 1.0;
        if (rho <= inner) {
          code = 1;
          base = kCoreIntensity;
        } else if (rho <= kShellOuter) {
          code = 4;
          base = kShellIntensity;
          t1c_gain = kT1cShellGain;
        } else if (rho <= 1.0) {
          code = 2;
          base = kHaloIntensity;
          flair_gain = kFlairHaloGain;
        }
        const double s = code == 0 ? c.texture_sigma_neg : sigma;
        p.seg.at(x, y, z) = static_cast<float>(code);
        p.t1.at(x, y, z) = static_cast<float>(std::max(0.0, base * (1.0 + s * n1.normal())));
        p.t1c.at(x, y, z) = static_cast<float>(std::max(0.0, base * t1c_gain * (1.0 + s * n2.normal())));
        p.flair.at(x, y, z) = static_cast<float>(std::max(0.0, base * flair_gain * (1.0 + s * n3.normal())));
      }
  return p;
}

GeneratedCohort generate_cohort(const PhantomConfig& c, const std::filesystem::path& out_dir) {
  c.validate();
  const auto root = std::filesystem::absolute(out_dir);
  std::filesystem::create_directories(root);
  GeneratedCohort out;
  for (std::size_t i = 0; i < c.n_patients; ++i) {
    const PhantomPatient p = generate_patient(c, i);
    const auto dir = root / p.patient_id;
    PatientRecord r;
    r.patient_id = p.patient_id;
    r.path_t1 = dir / (p.patient_id + "_t1.nii.gz");
    r.path_t1c = dir / (p.patient_id + "_t1c.nii.gz");
    r.path_flair = dir / (p.patient_id + "_flair.nii.gz");
    r.path_seg = dir / (p.patient_id + "_seg.nii.gz");
    write_nifti(p.t1, r.path_t1);
    write_nifti(p.t1c, r.path_t1c);
    write_nifti(p.flair, r.path_flair);
    NiftiWriteOptions seg_opts;
    seg_opts.datatype = NiftiDatatype::uint8;
    write_nifti(p.seg, r.path_seg, seg_opts);
    if (c.null_task) {
      // Positive MGMT indices span 1..17.
      RandomStream rs(mix_key(c.seed, 0x3613ULL, i));
      r.mgmt_index = p.recorded_label == 1 ? static_cast<int>(1 + rs.below(17)) : 0;
    } else {
      r.idh_status = p.recorded_label == 1 ? IdhStatus::mutated : IdhStatus::wildtype;
    }
    out.manifest.records.push_back(std::move(r));
  }
  out.manifest_path = root / "manifest.csv";
  write_manifest(out.manifest, out.manifest_path);
  return out;
}

}  // namespace gliopipe
