#include "gliopipe/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <sstream>

#include "gliopipe/error.hpp"
#include "gliopipe/util.hpp"

namespace gliopipe {

std::string_view to_string(View v) {
  switch (v) {
    case View::axial: return "axial";
    case View::coronal: return "coronal";
    case View::sagittal: return "sagittal";
  }
  return "?";
}

View parse_view(std::string_view s) {
  const auto v = to_lower(trim(s));
  if (v == "axial") return View::axial;
  if (v == "coronal") return View::coronal;
  if (v == "sagittal") return View::sagittal;
  throw ConfigError("unknown view '" + std::string(s) + "'");
}

void SubregionRanges::validate() const {
  for (int i = 0; i < 3; ++i) {
    const auto& r = ranges[i];
    if (!(r.lo > 0.0F && r.lo <= r.hi && r.hi <= 1.0F))
      throw ConfigError("subregion range " + std::to_string(i + 1) + " must lie within (0, 1] with lo <= hi");
    if (i > 0 && !(ranges[i - 1].hi < r.lo)) throw ConfigError("subregion ranges must be disjoint and ordered");
  }
}

EncodedVolume encode_subregions(const VolumeGrid& volume, const SegmentationMask& mask, const SubregionRanges& ranges) {
  require_same_grid(volume, mask);
  ranges.validate();

  std::array<double, 4> mn;
  std::array<double, 4> mx;
  mn.fill(std::numeric_limits<double>::infinity());
  mx.fill(-std::numeric_limits<double>::infinity());
  bool any = false;
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    const int s = mask.labels[i];
    if (s == 0) continue;
    if (s > 3) throw DataError("mask holds non-canonical label " + std::to_string(s));
    any = true;
    mn[s] = std::min(mn[s], static_cast<double>(volume.values[i]));
    mx[s] = std::max(mx[s], static_cast<double>(volume.values[i]));
  }
  if (!any) throw DataError("no tumor voxels");

  EncodedVolume out{VolumeGrid(volume.shape, 0.0F)};
  out.grid.spacing = volume.spacing;
  out.grid.orientation = volume.orientation;
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    const int s = mask.labels[i];
    if (s == 0) continue;
    const auto& r = ranges.ranges[s - 1];
    double v;
    if (mx[s] > mn[s]) {
      v = r.lo + (volume.values[i] - mn[s]) / (mx[s] - mn[s]) * (static_cast<double>(r.hi) - r.lo);
    } else {
      v = 0.5 * (static_cast<double>(r.lo) + r.hi);
    }
    out.grid.values[i] = std::clamp(static_cast<float>(v), r.lo, r.hi);
  }
  return out;
}

namespace {

int normal_axis(View v) {
  switch (v) {
    case View::axial: return 2;
    case View::coronal: return 1;
    case View::sagittal: return 0;
  }
  return 2;
}

// In-plane axes (u, v) for each view.
std::array<int, 2> plane_axes(View v) {
  switch (v) {
    case View::axial: return {0, 1};
    case View::coronal: return {0, 2};
    case View::sagittal: return {1, 2};
  }
  return {0, 1};
}

std::size_t dilate_lo(std::size_t lo, std::size_t margin) { return lo > margin ? lo - margin : 0; }
std::size_t dilate_hi(std::size_t hi, std::size_t margin, std::size_t n) { return std::min(hi + margin, n - 1); }

ImageTensor clamp_unit(ImageTensor t) {
  for (auto& v : t.values) v = std::clamp(v, 0.0F, 1.0F);
  return t;
}

}  // namespace

std::size_t largest_slice_index(const SegmentationMask& mask, View view) {
  const int axis = normal_axis(view);
  std::vector<std::size_t> counts(mask.shape[axis], 0);
  for (std::size_t z = 0; z < mask.shape[2]; ++z)
    for (std::size_t y = 0; y < mask.shape[1]; ++y)
      for (std::size_t x = 0; x < mask.shape[0]; ++x) {
        if (mask.at(x, y, z) == 0) continue;
        const std::array<std::size_t, 3> p{x, y, z};
        counts[p[axis]]++;
      }
  std::size_t best = 0;
  for (std::size_t i = 1; i < counts.size(); ++i)
    if (counts[i] > counts[best]) best = i;
  if (counts.empty() || counts[best] == 0) throw DataError("no tumor voxels");
  return best;
}

ViewSlice extract_view_slice(const EncodedVolume& encoded, const SegmentationMask& mask, View view,
                             std::size_t target_size, std::size_t margin) {
  require_same_grid(encoded.grid, mask);
  if (target_size == 0) throw ConfigError("target size must be positive");
  ViewSlice out;
  out.slice_index = largest_slice_index(mask, view);
  const int axis = normal_axis(view);
  const auto [au, av] = plane_axes(view);
  const std::size_t nu = mask.shape[au];
  const std::size_t nv = mask.shape[av];

  auto voxel = [&](std::size_t u, std::size_t v) {
    std::array<std::size_t, 3> p{};
    p[axis] = out.slice_index;
    p[au] = u;
    p[av] = v;
    return mask.index(p[0], p[1], p[2]);
  };

  Box2 box{nu, 0, nv, 0};
  for (std::size_t v = 0; v < nv; ++v)
    for (std::size_t u = 0; u < nu; ++u) {
      if (mask.labels[voxel(u, v)] == 0) continue;
      box.u0 = std::min(box.u0, u);
      box.u1 = std::max(box.u1, u);
      box.v0 = std::min(box.v0, v);
      box.v1 = std::max(box.v1, v);
    }
  box = {dilate_lo(box.u0, margin), dilate_hi(box.u1, margin, nu), dilate_lo(box.v0, margin),
         dilate_hi(box.v1, margin, nv)};
  out.crop = box;

  ImageTensor crop;
  crop.dims = {box.u1 - box.u0 + 1, box.v1 - box.v0 + 1};
  crop.spacing = {encoded.grid.spacing[au], encoded.grid.spacing[av]};
  crop.values.reserve(crop.element_count());
  for (std::size_t v = box.v0; v <= box.v1; ++v)
    for (std::size_t u = box.u0; u <= box.u1; ++u) crop.values.push_back(encoded.grid.values[voxel(u, v)]);
  out.image = clamp_unit(resize_linear(crop, {target_size, target_size}));
  return out;
}

SliceTriplet extract_slice_triplet(const EncodedVolume& encoded, const SegmentationMask& mask,
                                   std::size_t target_size, std::size_t margin) {
  SliceTriplet t;
  for (View v : kAllViews) t.views[static_cast<int>(v)] = extract_view_slice(encoded, mask, v, target_size, margin);
  return t;
}

VolumeInput extract_volume_input(const EncodedVolume& encoded, const SegmentationMask& mask,
                                 std::size_t target_size, std::size_t margin) {
  require_same_grid(encoded.grid, mask);
  if (target_size == 0) throw ConfigError("target size must be positive");
  Box3 box{{mask.shape[0], mask.shape[1], mask.shape[2]}, {0, 0, 0}};
  bool any = false;
  for (std::size_t z = 0; z < mask.shape[2]; ++z)
    for (std::size_t y = 0; y < mask.shape[1]; ++y)
      for (std::size_t x = 0; x < mask.shape[0]; ++x) {
        if (mask.at(x, y, z) == 0) continue;
        any = true;
        const std::array<std::size_t, 3> p{x, y, z};
        for (int a = 0; a < 3; ++a) {
          box.lo[a] = std::min(box.lo[a], p[a]);
          box.hi[a] = std::max(box.hi[a], p[a]);
        }
      }
  if (!any) throw DataError("no tumor voxels");
  for (int a = 0; a < 3; ++a) {
    box.lo[a] = dilate_lo(box.lo[a], margin);
    box.hi[a] = dilate_hi(box.hi[a], margin, mask.shape[a]);
  }

  ImageTensor crop;
  crop.dims = {box.hi[0] - box.lo[0] + 1, box.hi[1] - box.lo[1] + 1, box.hi[2] - box.lo[2] + 1};
  crop.spacing = {encoded.grid.spacing[0], encoded.grid.spacing[1], encoded.grid.spacing[2]};
  crop.values.reserve(crop.element_count());
  for (std::size_t z = box.lo[2]; z <= box.hi[2]; ++z)
    for (std::size_t y = box.lo[1]; y <= box.hi[1]; ++y)
      for (std::size_t x = box.lo[0]; x <= box.hi[0]; ++x) crop.values.push_back(encoded.grid.at(x, y, z));

  VolumeInput out;
  out.bbox = box;
  out.image = clamp_unit(resize_linear(crop, {target_size, target_size, target_size}));
  return out;
}

ImageTensor resize_linear(const ImageTensor& input, const std::vector<std::size_t>& out_dims) {
  if (input.dims.size() != out_dims.size() || (input.dims.size() != 2 && input.dims.size() != 3))
    throw DataError("resize_linear expects matching rank 2 or 3 dims");
  for (auto d : out_dims)
    if (d == 0) throw DataError("resize target has a zero extent");

  ImageTensor cur = input;
  for (std::size_t axis = 0; axis < input.dims.size(); ++axis) {
    const std::size_t in_n = cur.dims[axis];
    const std::size_t out_n = out_dims[axis];
    if (in_n == out_n) continue;

    std::vector<std::size_t> i0(out_n);
    std::vector<std::size_t> i1(out_n);
    std::vector<double> w(out_n);
    const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
    for (std::size_t i = 0; i < out_n; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
      i0[i] = static_cast<std::size_t>(std::floor(src));
      i1[i] = std::min(i0[i] + 1, in_n - 1);
      w[i] = src - static_cast<double>(i0[i]);
    }

    std::size_t inner = 1;
    for (std::size_t a = 0; a < axis; ++a) inner *= cur.dims[a];
    std::size_t outer = 1;
    for (std::size_t a = axis + 1; a < cur.dims.size(); ++a) outer *= cur.dims[a];

    ImageTensor next;
    next.dims = cur.dims;
    next.dims[axis] = out_n;
    next.spacing = cur.spacing;
    if (axis < next.spacing.size()) next.spacing[axis] = static_cast<float>(cur.spacing[axis] * scale);
    next.values.assign(inner * out_n * outer, 0.0F);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < out_n; ++i) {
        const float* a = cur.values.data() + (o * in_n + i0[i]) * inner;
        const float* b = cur.values.data() + (o * in_n + i1[i]) * inner;
        float* dst = next.values.data() + (o * out_n + i) * inner;
        const double wi = w[i];
        for (std::size_t k = 0; k < inner; ++k)
          dst[k] = static_cast<float>((1.0 - wi) * a[k] + wi * b[k]);
      }
    cur = std::move(next);
  }
  return cur;
}

std::string PreprocessConfig::fingerprint() const {
  std::ostringstream out;
  out.precision(9);
  out << "ranges=";
  for (const auto& r : ranges.ranges) out << r.lo << ':' << r.hi << ';';
  out << " size2d=" << size_2d << " size3d=" << size_3d << " margin=" << margin << " labels=";
  for (const auto& [k, v] : label_map) out << k << '>' << v << ';';
  out << " nan=" << (nan_policy == NanPolicy::zero ? "zero" : "reject");
  return out.str();
}

std::string PreprocessConfig::hash() const { return hex64(fnv1a64(fingerprint())); }

std::filesystem::path PreprocessCache::root_from_env(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("GLIOPIPE_CACHE"); env != nullptr && *env != '\0') return env;
  return fallback;
}

std::filesystem::path PreprocessCache::entry_path(const std::string& patient_id, Sequence seq, const std::string& item,
                                                  const std::string& config_hash) const {
  std::string safe = patient_id;
  for (auto& c : safe)
    if (c == '/' || c == '\\' || c == ':') c = '_';
  return root_ / config_hash / safe / (std::string(to_string(seq)) + "_" + item + ".itf");
}

std::optional<ImageTensor> PreprocessCache::load(const std::filesystem::path& entry) {
  if (!enabled() || !std::filesystem::exists(entry)) {
    ++misses_;
    return std::nullopt;
  }
  try {
    auto t = read_itf(entry);
    ++hits_;
    return t;
  } catch (const DataError&) {
    ++misses_;  // corrupt entries are rebuilt
    return std::nullopt;
  }
}

void PreprocessCache::store(const std::filesystem::path& entry, const ImageTensor& tensor) {
  if (enabled()) write_itf(tensor, entry);
}

PatientInputs prepare_patient_inputs(const PatientRecord& record, Sequence sequence, const PreprocessConfig& config,
                                     bool want_views, bool want_volume, PreprocessCache& cache) {
  PatientInputs out;
  const std::string hash = config.hash();
  // Entries also carry a digest of the source files so cohorts that reuse patient ids never collide.
  const std::string source =
      hex64(fnv1a64(record.sequence_path(sequence).string() + "|" + record.path_seg.string())).substr(0, 8);
  auto item = [&](std::string_view name) { return std::string(name) + "." + source; };

  std::array<std::optional<ImageTensor>, 3> views;
  std::optional<ImageTensor> volume;
  bool need_compute = false;
  if (want_views) {
    for (View v : kAllViews) {
      auto& slot = views[static_cast<int>(v)];
      slot = cache.load(cache.entry_path(record.patient_id, sequence, item(to_string(v)), hash));
      (slot ? out.cache_hits : out.cache_misses)++;
      need_compute |= !slot.has_value();
    }
  }
  if (want_volume) {
    volume = cache.load(cache.entry_path(record.patient_id, sequence, item("volume"), hash));
    (volume ? out.cache_hits : out.cache_misses)++;
    need_compute |= !volume.has_value();
  }

  if (need_compute) {
    const auto image = read_nifti(record.sequence_path(sequence), config.nan_policy);
    const auto mask = canonicalize_mask(read_nifti(record.path_seg, config.nan_policy), config.label_map);
    require_same_grid(image, mask);
    const auto encoded = encode_subregions(image, mask, config.ranges);
    if (want_views) {
      for (View v : kAllViews) {
        auto& slot = views[static_cast<int>(v)];
        if (slot) continue;
        slot = extract_view_slice(encoded, mask, v, config.size_2d, config.margin).image;
        cache.store(cache.entry_path(record.patient_id, sequence, item(to_string(v)), hash), *slot);
      }
    }
    if (want_volume && !volume) {
      volume = extract_volume_input(encoded, mask, config.size_3d, config.margin).image;
      cache.store(cache.entry_path(record.patient_id, sequence, item("volume"), hash), *volume);
    }
  }

  if (want_views) out.views = std::array<ImageTensor, 3>{*views[0], *views[1], *views[2]};
  if (want_volume) out.volume = *volume;
  return out;
}

}  // namespace gliopipe
