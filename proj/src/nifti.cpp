#include "csegnet/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "csegnet/io.hpp"

namespace csegnet {
namespace {

class HeaderReader {
 public:
  HeaderReader(std::span<const std::uint8_t> bytes, bool big_endian) : bytes_(bytes), big_(big_endian) {}

  template <typename U>
  U read(std::size_t offset) const {
    std::uint8_t tmp[sizeof(U)];
    std::memcpy(tmp, bytes_.data() + offset, sizeof(U));
    if (big_ != (std::endian::native == std::endian::big)) std::reverse(tmp, tmp + sizeof(U));
    U v;
    std::memcpy(&v, tmp, sizeof(U));
    return v;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  bool big_;
};

std::size_t datatype_bytes(NiftiDatatype t) {
  switch (t) {
    case NiftiDatatype::UInt8: return 1;
    case NiftiDatatype::Int16:
    case NiftiDatatype::UInt16: return 2;
    case NiftiDatatype::Float32: return 4;
  }
  return 0;
}

}  // namespace

NiftiVolume parse_nifti(std::span<const std::uint8_t> bytes, std::span<const std::uint8_t> image_file) {
  if (bytes.size() < kNiftiHeaderSize)
    fail(ErrorKind::TruncatedPayload, "NIfTI header needs 348 bytes, got " + std::to_string(bytes.size()));

  bool big = false;
  {
    HeaderReader le(bytes, false);
    HeaderReader be(bytes, true);
    if (le.read<std::int32_t>(0) == 348) big = false;
    else if (be.read<std::int32_t>(0) == 348) big = true;
    else fail(ErrorKind::BadMagic, "sizeof_hdr is not 348 in either byte order");
  }
  const char* magic = reinterpret_cast<const char*>(bytes.data() + 344);
  const bool single_file = std::memcmp(magic, "n+1\0", 4) == 0;
  const bool pair_file = std::memcmp(magic, "ni1\0", 4) == 0;
  if (!single_file && !pair_file) fail(ErrorKind::BadMagic, "magic is neither \"n+1\" nor \"ni1\"");

  HeaderReader h(bytes, big);
  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = h.read<std::int16_t>(40 + 2 * static_cast<std::size_t>(i));
  if (dim[0] < 1 || dim[0] > 7) fail(ErrorKind::BadMagic, "dim[0] out of range: " + std::to_string(dim[0]));
  std::int64_t extent[3] = {1, 1, 1};
  for (int i = 1; i <= dim[0]; ++i) {
    if (dim[i] < 1) fail(ErrorKind::BadMagic, "dim[" + std::to_string(i) + "] must be positive");
    if (i <= 3) extent[i - 1] = dim[i];
    else if (dim[i] > 1) fail(ErrorKind::UnsupportedDatatype, "only 3-D volumes are supported");
  }

  const auto raw_type = h.read<std::int16_t>(70);
  NiftiDatatype type;
  switch (raw_type) {
    case 2: type = NiftiDatatype::UInt8; break;
    case 4: type = NiftiDatatype::Int16; break;
    case 16: type = NiftiDatatype::Float32; break;
    case 512: type = NiftiDatatype::UInt16; break;
    default: fail(ErrorKind::UnsupportedDatatype, "datatype code " + std::to_string(raw_type));
  }

  float pixdim[8];
  for (int i = 0; i < 8; ++i) pixdim[i] = h.read<float>(76 + 4 * static_cast<std::size_t>(i));
  const float vox_offset_f = h.read<float>(108);
  const float slope = h.read<float>(112);
  const float inter = h.read<float>(116);

  if (!std::isfinite(vox_offset_f) || vox_offset_f < 0 || vox_offset_f > 1e9f)
    fail(ErrorKind::TruncatedPayload, "invalid vox_offset");
  auto offset = static_cast<std::size_t>(vox_offset_f);
  std::span<const std::uint8_t> payload = bytes;
  if (single_file) {
    if (offset < kNiftiHeaderSize) offset = 352;
  } else {
    payload = image_file;
  }

  const auto nx = extent[0], ny = extent[1], nz = extent[2];
  const auto count = static_cast<std::size_t>(nx * ny * nz);
  const auto nbytes = count * datatype_bytes(type);
  if (offset > payload.size() || payload.size() - offset < nbytes)
    fail(ErrorKind::TruncatedPayload, "voxel payload needs " + std::to_string(nbytes) + " bytes at offset " +
                                          std::to_string(offset) + ", have " + std::to_string(payload.size()));

  auto axis_spacing = [&](int i) {
    const double v = std::abs(static_cast<double>(pixdim[i]));
    return std::isfinite(v) && v > 0 ? v : 1.0;
  };

  NiftiVolume vol;
  vol.datatype = type;
  vol.big_endian = big;
  vol.spacing = Spacing{axis_spacing(3), axis_spacing(2), axis_spacing(1)};
  // NIfTI stores x fastest, which is row-major (z, y, x).
  std::vector<float> values(count);
  HeaderReader p(payload.subspan(offset), big);
  const std::size_t elem = datatype_bytes(type);
  for (std::size_t i = 0; i < count; ++i) {
    float v = 0;
    switch (type) {
      case NiftiDatatype::UInt8: v = payload[offset + i]; break;
      case NiftiDatatype::Int16: v = p.read<std::int16_t>(i * elem); break;
      case NiftiDatatype::UInt16: v = p.read<std::uint16_t>(i * elem); break;
      case NiftiDatatype::Float32: v = p.read<float>(i * elem); break;
    }
    values[i] = v;
  }
  if (slope != 0.0f && std::isfinite(slope) && std::isfinite(inter) && !(slope == 1.0f && inter == 0.0f))
    for (auto& v : values) v = slope * v + inter;
  vol.data = Tensor(Shape{nz, ny, nx}, std::move(values));
  return vol;
}

NiftiVolume read_nifti(const std::filesystem::path& path) {
  const auto bytes = read_binary_file(path);
  if (path.extension() == ".hdr") {
    auto img = path;
    img.replace_extension(".img");
    const auto image = read_binary_file(img);
    return parse_nifti(bytes, image);
  }
  if (path.extension() == ".gz") fail(ErrorKind::UnsupportedDatatype, "gzip-compressed NIfTI must be decompressed first");
  return parse_nifti(bytes);
}

std::vector<std::uint8_t> encode_nifti(const Tensor& volume, const Spacing& spacing, NiftiDatatype datatype,
                                       bool big_endian) {
  require(volume.rank() == 3, ErrorKind::ShapeMismatch, "NIfTI volume must be (D,H,W)");
  require(volume.dim(0) < 32768 && volume.dim(1) < 32768 && volume.dim(2) < 32768, ErrorKind::ShapeMismatch,
          "NIfTI dims must fit in int16");
  const std::size_t elem = datatype_bytes(datatype);
  const auto count = static_cast<std::size_t>(volume.numel());
  std::vector<std::uint8_t> out(352 + count * elem, 0);
  const bool swap = big_endian != (std::endian::native == std::endian::big);
  auto put = [&](std::size_t offset, auto value) {
    std::uint8_t tmp[sizeof(value)];
    std::memcpy(tmp, &value, sizeof(value));
    if (swap) std::reverse(tmp, tmp + sizeof(value));
    std::memcpy(out.data() + offset, tmp, sizeof(value));
  };
  put(0, std::int32_t{348});
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(volume.dim(2)), static_cast<std::int16_t>(volume.dim(1)),
                                static_cast<std::int16_t>(volume.dim(0)), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put(40 + 2 * static_cast<std::size_t>(i), dims[i]);
  put(70, static_cast<std::int16_t>(datatype));
  put(72, static_cast<std::int16_t>(elem * 8));
  const float pix[8] = {1.0f, static_cast<float>(spacing.col), static_cast<float>(spacing.row),
                        static_cast<float>(spacing.slice), 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) put(76 + 4 * static_cast<std::size_t>(i), pix[i]);
  put(108, 352.0f);
  put(112, 1.0f);
  put(116, 0.0f);
  std::memcpy(out.data() + 344, "n+1\0", 4);
  for (std::size_t i = 0; i < count; ++i) {
    const float v = volume[static_cast<std::int64_t>(i)];
    const std::size_t at = 352 + i * elem;
    switch (datatype) {
      case NiftiDatatype::UInt8: out[at] = static_cast<std::uint8_t>(v); break;
      case NiftiDatatype::Int16: put(at, static_cast<std::int16_t>(v)); break;
      case NiftiDatatype::UInt16: put(at, static_cast<std::uint16_t>(v)); break;
      case NiftiDatatype::Float32: put(at, v); break;
    }
  }
  return out;
}

Case case_from_nifti(const NiftiVolume& image, const NiftiVolume* label, std::string case_id, Phase phase) {
  Case c;
  c.case_id = std::move(case_id);
  c.phase = phase;
  c.image = image.data;
  c.spacing = image.spacing;
  c.label.assign(static_cast<std::size_t>(image.data.numel()), 0);
  if (label) {
    require(label->data.shape() == image.data.shape(), ErrorKind::ShapeMismatch, "label volume shape differs from image");
    for (std::size_t i = 0; i < c.label.size(); ++i) {
      const float v = label->data[static_cast<std::int64_t>(i)];
      const long r = std::lround(v);
      if (r < 0 || r >= kNumCardiacClasses || std::abs(v - static_cast<float>(r)) > 1e-3f)
        fail(ErrorKind::CorruptEntry, "label volume holds value " + std::to_string(v));
      c.label[i] = static_cast<std::uint8_t>(r);
    }
  }
  c.validate();
  return c;
}

}  // namespace csegnet
