#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "csegnet/dataset.hpp"

namespace csegnet {

enum class NiftiDatatype : std::int16_t { UInt8 = 2, Int16 = 4, Float32 = 16, UInt16 = 512 };

inline constexpr std::size_t kNiftiHeaderSize = 348;

struct NiftiVolume {
  Tensor data;  // (D, H, W) after scl_slope / scl_inter scaling
  Spacing spacing;
  NiftiDatatype datatype = NiftiDatatype::Float32;
  bool big_endian = false;
};

/// Parses a NIfTI-1 volume. For single-file volumes ("n+1") the voxels follow
/// the header at vox_offset; for header/image pairs ("ni1") pass the .img bytes
/// as `image_file`. Byte order is detected from the sizeof_hdr sentinel.
/// Throws TruncatedPayload, BadMagic or UnsupportedDatatype.
NiftiVolume parse_nifti(std::span<const std::uint8_t> bytes, std::span<const std::uint8_t> image_file = {});

NiftiVolume read_nifti(const std::filesystem::path& path);

/// Single-file ("n+1") encoding with vox_offset 352.
std::vector<std::uint8_t> encode_nifti(const Tensor& volume, const Spacing& spacing,
                                       NiftiDatatype datatype = NiftiDatatype::Float32, bool big_endian = false);

/// Builds a case from an image volume and an optional label volume.
Case case_from_nifti(const NiftiVolume& image, const NiftiVolume* label, std::string case_id, Phase phase);

}  // namespace csegnet
