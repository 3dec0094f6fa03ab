#pragma once

#include <filesystem>
#include <variant>

#include "gaaf/volume.hpp"

namespace gaaf {

using ImageVolume = Volume<float>;
using AnyVolume = std::variant<ImageVolume, MaskVolume>;

/// GVOL container failures, one kind per distinct defect.
class GvolError : public DataError {
 public:
  enum class Kind {
    Unreadable,
    BadMagic,
    TruncatedHeader,
    BadHeader,
    TruncatedPayload,
    LengthMismatch,
    NonBinaryMask,
  };

  GvolError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/*
 * GVOL layout:
 *   bytes 0-7    ASCII "GVOL0001"
 *   bytes 8-11   little-endian u32 header length N
 *   N bytes      JSON {"dims":[z,y,x],"spacing_mm":[sz,sy,sx],"dtype":"f32"|"u8"}
 *   payload      z*y*x little-endian elements, x fastest
 */
AnyVolume read_gvol(const std::filesystem::path& path);

/// read_gvol that insists on an f32 payload.
ImageVolume read_image(const std::filesystem::path& path);
/// read_gvol that insists on a u8 (mask) payload.
MaskVolume read_mask(const std::filesystem::path& path);

void write_gvol(const ImageVolume& vol, const std::filesystem::path& path);
void write_gvol(const MaskVolume& vol, const std::filesystem::path& path);

/// Trilinear resampling to `target_dims` under the voxel-center convention
/// p_in = (p_out + 0.5) * in/out - 0.5, clamped to the edge voxels.
template <typename T>
Volume<T> resample_trilinear(const Volume<T>& vol, const Dims3& target_dims);

/// Intensity window in HU applied before resampling.
struct HuWindow {
  double lo = -1000.0;
  double hi = 1000.0;
};

/// Clamp to [lo, hi] then map affinely onto [0, 1].
template <typename T>
Volume<T> normalize_hu(const Volume<T>& vol, double lo, double hi);

/// Unweighted mean (z, y, x) index of the nonzero voxels; FullRes frame of the mask grid.
Point3 mask_center_of_mass(const MaskVolume& mask);

/// Box of `crop_dims` whose voxel (i, j, k) is input voxel round(center) - crop_dims / 2 + (i, j, k).
/// Positions outside the input take `pad_value`.
template <typename T>
Volume<T> crop_subvolume(const Volume<T>& vol, const Point3& center, const Dims3& crop_dims,
                         T pad_value);

}  // namespace gaaf
