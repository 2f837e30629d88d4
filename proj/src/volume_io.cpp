#include "gliopipe/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gliopipe/error.hpp"

namespace gliopipe {

VolumeGrid::VolumeGrid(std::array<std::size_t, 3> s, float fill)
    : shape(s), values(s[0] * s[1] * s[2], fill) {}

SegmentationMask::SegmentationMask(std::array<std::size_t, 3> s) : shape(s), labels(s[0] * s[1] * s[2], 0) {}

std::size_t SegmentationMask::nonzero_count() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace {

constexpr int kHeaderSize = 348;
constexpr int kDataOffset = 352;

// Header field offsets.
constexpr int kOffDim = 40;
constexpr int kOffDatatype = 70;
constexpr int kOffBitpix = 72;
constexpr int kOffPixdim = 76;
constexpr int kOffVoxOffset = 108;
constexpr int kOffSclSlope = 112;
constexpr int kOffSclInter = 116;
constexpr int kOffQformCode = 252;
constexpr int kOffSformCode = 254;
constexpr int kOffQuatern = 256;
constexpr int kOffSrow = 280;
constexpr int kOffMagic = 344;

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    if (offset + sizeof(T) > bytes_.size()) throw DataError("short read");
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), bytes_.data() + offset, sizeof(T));
    if (swap_) std::reverse(raw.begin(), raw.end());
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  bool swap_;
};

class ByteWriter {
 public:
  ByteWriter(std::vector<std::uint8_t>& out, bool big_endian)
      : out_(out), swap_(big_endian != (std::endian::native == std::endian::big)) {}

  template <typename T>
  void put(std::size_t offset, T value) {
    std::array<std::uint8_t, sizeof(T)> raw;
    std::memcpy(raw.data(), &value, sizeof(T));
    if (swap_) std::reverse(raw.begin(), raw.end());
    if (offset + sizeof(T) > out_.size()) out_.resize(offset + sizeof(T), 0);
    std::memcpy(out_.data() + offset, raw.data(), sizeof(T));
  }

 private:
  std::vector<std::uint8_t>& out_;
  bool swap_;
};

std::size_t datatype_size(std::int16_t datatype) {
  switch (static_cast<NiftiDatatype>(datatype)) {
    case NiftiDatatype::uint8: return 1;
    case NiftiDatatype::int16: return 2;
    case NiftiDatatype::int32: return 4;
    case NiftiDatatype::float32: return 4;
    case NiftiDatatype::float64: return 8;
  }
  throw DataError("unsupported datatype " + std::to_string(datatype));
}

bool is_gzip(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

Affine quaternion_affine(const ByteReader& h, const std::array<float, 4>& pixdim) {
  const double b = h.get<float>(kOffQuatern);
  const double c = h.get<float>(kOffQuatern + 4);
  const double d = h.get<float>(kOffQuatern + 8);
  const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
  const double qfac = pixdim[0] < 0 ? -1.0 : 1.0;
  const double r[3][3] = {
      {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
      {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
      {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b},
  };
  Affine m{};
  for (int i = 0; i < 3; ++i) {
    m[i][0] = r[i][0] * pixdim[1];
    m[i][1] = r[i][1] * pixdim[2];
    m[i][2] = r[i][2] * pixdim[3] * qfac;
    m[i][3] = h.get<float>(kOffQuatern + 12 + 4 * i);
  }
  return m;
}

}  // namespace

std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw DataError("zlib init failed");
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> chunk;
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  int rc = Z_OK;
  do {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("corrupt gzip stream");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) break;  // truncated stream
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes, int level) {
  z_stream zs{};
  if (deflateInit2(&zs, level, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw DataError("zlib init failed");
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(bytes.size())));
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = static_cast<uInt>(bytes.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw DataError("gzip compression failed");
  out.resize(zs.total_out);
  return out;
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

VolumeGrid parse_nifti(std::span<const std::uint8_t> bytes, NanPolicy nan_policy) {
  std::vector<std::uint8_t> inflated;
  if (is_gzip(bytes)) {
    inflated = gzip_decompress(bytes);
    bytes = inflated;
  }
  if (bytes.size() < kHeaderSize) throw DataError("not NIfTI-1: short read of header");

  std::int32_t sizeof_hdr = 0;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  bool swap = false;
  if (sizeof_hdr != kHeaderSize) {
    if (static_cast<std::int32_t>(__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr))) != kHeaderSize) throw DataError("not NIfTI-1: sizeof_hdr is not 348");
    swap = true;
  }
  const ByteReader h(bytes, swap);
  if (std::memcmp(bytes.data() + kOffMagic, "n+1\0", 4) != 0) throw DataError("not NIfTI-1: bad magic");

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = h.get<std::int16_t>(kOffDim + 2 * i);
  if (dim[0] != 3 && dim[0] != 4) throw DataError("unsupported dimensionality: dim[0] = " + std::to_string(dim[0]));
  if (dim[0] == 4 && dim[4] > 1) throw DataError("unsupported dimensionality: dim[4] = " + std::to_string(dim[4]));
  for (int i = 1; i <= 3; ++i)
    if (dim[i] < 1) throw DataError("unsupported dimensionality: dim[" + std::to_string(i) + "] < 1");

  const auto datatype = h.get<std::int16_t>(kOffDatatype);
  const std::size_t elem = datatype_size(datatype);
  const auto bitpix = h.get<std::int16_t>(kOffBitpix);
  if (bitpix != 0 && static_cast<std::size_t>(bitpix) != 8 * elem)
    throw DataError("unsupported datatype: bitpix " + std::to_string(bitpix) + " disagrees with datatype");

  std::array<float, 4> pixdim{};
  for (int i = 0; i < 4; ++i) pixdim[i] = h.get<float>(kOffPixdim + 4 * i);

  VolumeGrid grid({static_cast<std::size_t>(dim[1]), static_cast<std::size_t>(dim[2]),
                   static_cast<std::size_t>(dim[3])});
  for (int i = 0; i < 3; ++i) {
    const float s = std::abs(pixdim[i + 1]);
    if (!(s > 0.0F) || !std::isfinite(s)) throw DataError("non-positive voxel spacing in pixdim");
    grid.spacing[i] = s;
  }

  const float vox_offset_f = h.get<float>(kOffVoxOffset);
  const std::size_t vox_offset =
      vox_offset_f >= static_cast<float>(kHeaderSize) ? static_cast<std::size_t>(vox_offset_f) : kDataOffset;
  const std::size_t n = grid.voxel_count();
  if (vox_offset + n * elem > bytes.size()) throw DataError("short read: data section truncated");

  const float slope = h.get<float>(kOffSclSlope);
  const float inter = h.get<float>(kOffSclInter);
  const bool scale = slope != 0.0F && std::isfinite(slope);

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = vox_offset + i * elem;
    double v = 0.0;
    switch (static_cast<NiftiDatatype>(datatype)) {
      case NiftiDatatype::uint8: v = bytes[off]; break;
      case NiftiDatatype::int16: v = h.get<std::int16_t>(off); break;
      case NiftiDatatype::int32: v = h.get<std::int32_t>(off); break;
      case NiftiDatatype::float32: v = h.get<float>(off); break;
      case NiftiDatatype::float64: v = h.get<double>(off); break;
    }
    if (scale) v = v * static_cast<double>(slope) + static_cast<double>(inter);
    auto f = static_cast<float>(v);
    if (!std::isfinite(f)) {
      if (nan_policy == NanPolicy::reject) throw DataError("non-finite voxel value at index " + std::to_string(i));
      f = 0.0F;
    }
    grid.values[i] = f;
  }

  if (h.get<std::int16_t>(kOffSformCode) > 0) {
    Affine m{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) m[r][c] = h.get<float>(kOffSrow + 16 * r + 4 * c);
    grid.orientation = m;
  } else if (h.get<std::int16_t>(kOffQformCode) > 0) {
    grid.orientation = quaternion_affine(h, pixdim);
  }
  return grid;
}

VolumeGrid read_nifti(const std::filesystem::path& path, NanPolicy nan_policy) {
  const auto bytes = read_binary_file(path);
  try {
    return parse_nifti(bytes, nan_policy);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_nifti(const VolumeGrid& grid, const NiftiWriteOptions& options) {
  const auto dt = static_cast<std::int16_t>(options.datatype);
  const std::size_t elem = datatype_size(dt);
  std::vector<std::uint8_t> out(kDataOffset + grid.voxel_count() * elem, 0);
  ByteWriter w(out, options.big_endian);
  w.put<std::int32_t>(0, kHeaderSize);
  w.put<std::int16_t>(kOffDim, 3);
  for (int i = 0; i < 3; ++i) w.put<std::int16_t>(kOffDim + 2 * (i + 1), static_cast<std::int16_t>(grid.shape[i]));
  for (int i = 4; i < 8; ++i) w.put<std::int16_t>(kOffDim + 2 * i, 1);
  w.put<std::int16_t>(kOffDatatype, dt);
  w.put<std::int16_t>(kOffBitpix, static_cast<std::int16_t>(8 * elem));
  w.put<float>(kOffPixdim, 1.0F);
  for (int i = 0; i < 3; ++i) w.put<float>(kOffPixdim + 4 * (i + 1), grid.spacing[i]);
  w.put<float>(kOffVoxOffset, static_cast<float>(kDataOffset));
  w.put<float>(kOffSclSlope, options.scl_slope);
  w.put<float>(kOffSclInter, options.scl_inter);
  w.put<std::uint8_t>(123, 2);  // xyzt_units: mm
  if (grid.orientation) {
    w.put<std::int16_t>(kOffSformCode, 1);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) w.put<float>(kOffSrow + 16 * r + 4 * c, static_cast<float>((*grid.orientation)[r][c]));
  }
  std::memcpy(out.data() + kOffMagic, "n+1\0", 4);

  const bool scale = options.scl_slope != 0.0F;
  for (std::size_t i = 0; i < grid.voxel_count(); ++i) {
    double v = grid.values[i];
    if (scale) v = (v - options.scl_inter) / options.scl_slope;
    const std::size_t off = kDataOffset + i * elem;
    switch (options.datatype) {
      case NiftiDatatype::uint8: out[off] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); break;
      case NiftiDatatype::int16:
        w.put<std::int16_t>(off, static_cast<std::int16_t>(std::clamp(std::lround(v), -32768L, 32767L)));
        break;
      case NiftiDatatype::int32: w.put<std::int32_t>(off, static_cast<std::int32_t>(std::lround(v))); break;
      case NiftiDatatype::float32: w.put<float>(off, static_cast<float>(v)); break;
      case NiftiDatatype::float64: w.put<double>(off, v); break;
    }
  }
  return out;
}

void write_nifti(const VolumeGrid& grid, const std::filesystem::path& path, const NiftiWriteOptions& options) {
  auto bytes = encode_nifti(grid, options);
  if (path.extension() == ".gz") bytes = gzip_compress(bytes);
  write_binary_file(path, bytes);
}

const LabelMap& default_label_map() {
  static const LabelMap map{{0, 0}, {1, 1}, {2, 2}, {4, 3}};
  return map;
}

SegmentationMask canonicalize_mask(const VolumeGrid& raw, const LabelMap& label_map) {
  for (const auto& [from, to] : label_map)
    if (to < 0 || to > 3) throw ConfigError("label map target " + std::to_string(to) + " is not a canonical code");

  SegmentationMask mask(raw.shape);
  mask.spacing = raw.spacing;
  std::map<long, std::size_t> unmapped;
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    const float v = raw.values[i];
    const long code = std::lround(v);
    if (std::abs(v - static_cast<float>(code)) > 1e-3F)
      throw DataError("mask value " + std::to_string(v) + " is not an integer code");
    if (code == 0) continue;
    auto it = label_map.find(static_cast<int>(code));
    if (it == label_map.end()) {
      unmapped[code]++;
      continue;
    }
    mask.labels[i] = static_cast<std::uint8_t>(it->second);
  }
  if (!unmapped.empty()) {
    std::string msg;
    for (const auto& [code, count] : unmapped) {
      if (!msg.empty()) msg += "; ";
      msg += "unmapped code " + std::to_string(code) + " (" + std::to_string(count) + " voxels)";
    }
    throw DataError(msg);
  }
  return mask;
}

VolumeGrid mask_to_grid(const SegmentationMask& mask) {
  VolumeGrid g(mask.shape);
  g.spacing = mask.spacing;
  for (std::size_t i = 0; i < mask.labels.size(); ++i) g.values[i] = mask.labels[i];
  return g;
}

void require_same_grid(const VolumeGrid& volume, const SegmentationMask& mask) {
  if (volume.shape != mask.shape) {
    auto fmt = [](const std::array<std::size_t, 3>& s) {
      return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]);
    };
    throw DataError("volume/mask shape mismatch: " + fmt(volume.shape) + " vs " + fmt(mask.shape));
  }
}

std::size_t ImageTensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return dims.empty() ? 0 : n;
}

ImageTensor to_tensor(const VolumeGrid& grid) {
  return {{grid.shape[0], grid.shape[1], grid.shape[2]},
          {grid.spacing[0], grid.spacing[1], grid.spacing[2]},
          grid.values};
}

VolumeGrid to_volume(const ImageTensor& tensor) {
  if (tensor.dims.size() != 3) throw DataError("tensor is not three-dimensional");
  VolumeGrid g({tensor.dims[0], tensor.dims[1], tensor.dims[2]});
  for (int i = 0; i < 3; ++i) g.spacing[i] = tensor.spacing.size() == 3 ? tensor.spacing[i] : 1.0F;
  g.values = tensor.values;
  return g;
}

namespace {

void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_le32(std::span<const std::uint8_t> b, std::size_t off) {
  if (off + 4 > b.size()) throw DataError("corrupt ITF: truncated");
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_itf(const ImageTensor& tensor) {
  if (tensor.values.size() != tensor.element_count()) throw DataError("tensor payload does not match its dims");
  std::vector<std::uint8_t> out{'I', 'T', 'F', '1'};
  put_le32(out, static_cast<std::uint32_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put_le32(out, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < tensor.dims.size(); ++i)
    put_le32(out, std::bit_cast<std::uint32_t>(i < tensor.spacing.size() ? tensor.spacing[i] : 1.0F));
  const std::size_t payload_start = out.size();
  for (float v : tensor.values) put_le32(out, std::bit_cast<std::uint32_t>(v));
  const auto crc = crc32(0L, out.data() + payload_start, static_cast<uInt>(out.size() - payload_start));
  put_le32(out, static_cast<std::uint32_t>(crc));
  return out;
}

ImageTensor decode_itf(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "ITF1", 4) != 0) throw DataError("corrupt ITF: bad magic");
  const std::uint32_t ndim = get_le32(bytes, 4);
  if (ndim == 0 || ndim > 8) throw DataError("corrupt ITF: ndim " + std::to_string(ndim));
  ImageTensor t;
  std::size_t off = 8;
  for (std::uint32_t i = 0; i < ndim; ++i, off += 4) t.dims.push_back(get_le32(bytes, off));
  for (std::uint32_t i = 0; i < ndim; ++i, off += 4) t.spacing.push_back(std::bit_cast<float>(get_le32(bytes, off)));
  const std::size_t n = t.element_count();
  if (off + 4 * n + 4 != bytes.size()) throw DataError("corrupt ITF: size mismatch");
  const auto crc = crc32(0L, bytes.data() + off, static_cast<uInt>(4 * n));
  if (static_cast<std::uint32_t>(crc) != get_le32(bytes, off + 4 * n)) throw DataError("corrupt ITF: checksum mismatch");
  t.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.values[i] = std::bit_cast<float>(get_le32(bytes, off + 4 * i));
  return t;
}

void write_itf(const ImageTensor& tensor, const std::filesystem::path& path) {
  write_binary_file(path, encode_itf(tensor));
}

ImageTensor read_itf(const std::filesystem::path& path) { return decode_itf(read_binary_file(path)); }

}  // namespace gliopipe
