#include "gaaf/volume_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <type_traits>

#include "gaaf/byte_io.hpp"
#include "json.hpp"

namespace gaaf {

namespace {

constexpr std::string_view kGvolMagic = "GVOL0001";

bool is_binary(const MaskVolume::Storage& data) { return (data <= std::uint8_t{1}).all(); }

template <typename T>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() {
  return "f32";
}
template <>
constexpr const char* dtype_name<std::uint8_t>() {
  return "u8";
}

template <typename T>
void write_any(const Volume<T>& vol, const std::filesystem::path& path) {
  vol.validate();
  if constexpr (std::is_same_v<T, std::uint8_t>) {
    if (!is_binary(vol.data))
      throw DataError("mask volume holds values other than 0/1");
  }
  const nlohmann::json header = {
      {"dims", {vol.dims(0), vol.dims(1), vol.dims(2)}},
      {"spacing_mm", {vol.spacing_mm(0), vol.spacing_mm(1), vol.spacing_mm(2)}},
      {"dtype", dtype_name<T>()},
  };
  std::vector<char> payload;
  payload.reserve(static_cast<std::size_t>(vol.size()) * sizeof(T));
  for (Eigen::Index i = 0; i < vol.size(); ++i) byte_io::append_le<T>(payload, vol.data(i));
  byte_io::write_file(path, byte_io::frame(kGvolMagic, header.dump(), payload));
}

template <typename T>
Volume<T> decode_payload(const Dims3& dims, const Spacing3& spacing,
                         const std::vector<char>& payload, const std::string& where) {
  const auto n = static_cast<std::size_t>(voxel_count(dims));
  const std::size_t expected = n * sizeof(T);
  if (payload.size() < expected) {
    std::ostringstream msg;
    msg << where << ": truncated payload, expected " << n << " elements, found "
        << payload.size() / sizeof(T);
    throw GvolError(GvolError::Kind::TruncatedPayload, msg.str());
  }
  if (payload.size() > expected) {
    std::ostringstream msg;
    msg << where << ": payload is " << payload.size() << " bytes but header declares " << expected;
    throw GvolError(GvolError::Kind::LengthMismatch, msg.str());
  }
  Volume<T> vol(dims, spacing);
  for (std::size_t i = 0; i < n; ++i)
    vol.data(static_cast<Eigen::Index>(i)) = byte_io::load_le<T>(payload.data() + i * sizeof(T));
  return vol;
}

}  // namespace

std::string to_string(const Dims3& dims) {
  std::ostringstream s;
  s << "(" << dims(0) << "," << dims(1) << "," << dims(2) << ")";
  return s.str();
}

std::string to_string(const FrameTag& frame) {
  return std::string(frame.kind == FrameKind::FullRes ? "FullRes" : "Downsampled") +
         to_string(frame.dims);
}

void require_frame_dims(const Point3& p, const Dims3& dims, const char* what) {
  if (!same_dims(p.frame.dims, dims))
    throw FrameMismatchError(std::string(what) + ": point in frame " + to_string(p.frame) +
                             " used on grid " + to_string(dims));
}

AnyVolume read_gvol(const std::filesystem::path& path) {
  std::vector<char> bytes;
  try {
    bytes = byte_io::read_file(path);
  } catch (const DataError& e) {
    throw GvolError(GvolError::Kind::Unreadable, e.what());
  }
  const std::string where = path.string();
  byte_io::UnframeStatus status{};
  auto framed = byte_io::unframe(bytes, kGvolMagic, status);
  if (status == byte_io::UnframeStatus::BadMagic)
    throw GvolError(GvolError::Kind::BadMagic, where + ": not a GVOL0001 file");
  if (status == byte_io::UnframeStatus::TruncatedHeader)
    throw GvolError(GvolError::Kind::TruncatedHeader, where + ": truncated header");

  Dims3 dims;
  Spacing3 spacing;
  std::string dtype;
  try {
    const auto header = nlohmann::json::parse(framed.header);
    const auto& d = header.at("dims");
    const auto& s = header.at("spacing_mm");
    if (d.size() != 3 || s.size() != 3) throw std::runtime_error("dims/spacing need 3 entries");
    for (int a = 0; a < 3; ++a) {
      dims(a) = d.at(a).get<int>();
      spacing(a) = s.at(a).get<double>();
    }
    dtype = header.at("dtype").get<std::string>();
  } catch (const std::exception& e) {
    throw GvolError(GvolError::Kind::BadHeader, where + ": bad header: " + e.what());
  }
  if ((dims < 1).any() || (spacing <= 0.0).any())
    throw GvolError(GvolError::Kind::BadHeader, where + ": non-positive dims or spacing");

  if (dtype == "f32") return decode_payload<float>(dims, spacing, framed.payload, where);
  if (dtype == "u8") {
    auto mask = decode_payload<std::uint8_t>(dims, spacing, framed.payload, where);
    if (!is_binary(mask.data))
      throw GvolError(GvolError::Kind::NonBinaryMask, where + ": mask payload is not binary");
    return mask;
  }
  throw GvolError(GvolError::Kind::BadHeader, where + ": unknown dtype '" + dtype + "'");
}

ImageVolume read_image(const std::filesystem::path& path) {
  auto any = read_gvol(path);
  if (auto* img = std::get_if<ImageVolume>(&any)) return std::move(*img);
  throw DataError(path.string() + ": expected an f32 image volume, found a u8 mask");
}

MaskVolume read_mask(const std::filesystem::path& path) {
  auto any = read_gvol(path);
  if (auto* m = std::get_if<MaskVolume>(&any)) return std::move(*m);
  throw DataError(path.string() + ": expected a u8 mask volume, found an f32 image");
}

void write_gvol(const ImageVolume& vol, const std::filesystem::path& path) {
  write_any(vol, path);
}
void write_gvol(const MaskVolume& vol, const std::filesystem::path& path) { write_any(vol, path); }

template <typename T>
Volume<T> resample_trilinear(const Volume<T>& vol, const Dims3& target_dims) {
  vol.validate();
  if ((target_dims < 1).any())
    throw ShapeError("resample target dims must be >= 1, got " + to_string(target_dims));

  const Eigen::Array3d ratio = vol.dims.template cast<double>() / target_dims.template cast<double>();
  Volume<T> out(target_dims, vol.spacing_mm * ratio);

  // Per-axis lookup: lower index, upper index and fractional weight.
  struct Tap {
    Eigen::Index lo, hi;
    double frac;
  };
  std::array<std::vector<Tap>, 3> taps;
  for (int a = 0; a < 3; ++a) {
    taps[a].resize(static_cast<std::size_t>(target_dims(a)));
    const double last = vol.dims(a) - 1;
    for (int o = 0; o < target_dims(a); ++o) {
      const double p = std::clamp((o + 0.5) * ratio(a) - 0.5, 0.0, last);
      const auto lo = static_cast<Eigen::Index>(std::floor(p));
      const auto hi = std::min<Eigen::Index>(lo + 1, vol.dims(a) - 1);
      taps[a][static_cast<std::size_t>(o)] = {lo, hi, p - static_cast<double>(lo)};
    }
  }

  for (int z = 0; z < target_dims(0); ++z) {
    const Tap& tz = taps[0][static_cast<std::size_t>(z)];
    for (int y = 0; y < target_dims(1); ++y) {
      const Tap& ty = taps[1][static_cast<std::size_t>(y)];
      for (int x = 0; x < target_dims(2); ++x) {
        const Tap& tx = taps[2][static_cast<std::size_t>(x)];
        auto lerp_x = [&](Eigen::Index zz, Eigen::Index yy) {
          const double a = vol(zz, yy, tx.lo);
          const double b = vol(zz, yy, tx.hi);
          return a + (b - a) * tx.frac;
        };
        const double c00 = lerp_x(tz.lo, ty.lo);
        const double c01 = lerp_x(tz.lo, ty.hi);
        const double c10 = lerp_x(tz.hi, ty.lo);
        const double c11 = lerp_x(tz.hi, ty.hi);
        const double c0 = c00 + (c01 - c00) * ty.frac;
        const double c1 = c10 + (c11 - c10) * ty.frac;
        out(z, y, x) = static_cast<T>(c0 + (c1 - c0) * tz.frac);
      }
    }
  }
  return out;
}

template <typename T>
Volume<T> normalize_hu(const Volume<T>& vol, double lo, double hi) {
  if (!(lo < hi)) throw UsageError("intensity window needs lo < hi");
  Volume<T> out = vol;
  const double width = hi - lo;
  out.data = vol.data.unaryExpr([&](T v) {
    return static_cast<T>((std::clamp(static_cast<double>(v), lo, hi) - lo) / width);
  });
  return out;
}

Point3 mask_center_of_mass(const MaskVolume& mask) {
  mask.validate();
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  std::int64_t count = 0;
  for (int z = 0; z < mask.dims(0); ++z)
    for (int y = 0; y < mask.dims(1); ++y)
      for (int x = 0; x < mask.dims(2); ++x)
        if (mask(z, y, x) != 0) {
          sum += Eigen::Vector3d(z, y, x);
          ++count;
        }
  if (count == 0) throw EmptyMaskError("mask has no foreground voxels");
  return {sum / static_cast<double>(count), FrameTag::full_res(mask.dims)};
}

template <typename T>
Volume<T> crop_subvolume(const Volume<T>& vol, const Point3& center, const Dims3& crop_dims,
                         T pad_value) {
  vol.validate();
  require_frame_dims(center, vol.dims, "crop_subvolume");
  if ((crop_dims < 1).any()) throw ShapeError("crop dims must be >= 1");

  Eigen::Array3i start;
  for (int a = 0; a < 3; ++a)
    start(a) = static_cast<int>(std::lround(center.coords(a))) - crop_dims(a) / 2;

  Volume<T> out(crop_dims, vol.spacing_mm, pad_value);
  for (int i = 0; i < crop_dims(0); ++i) {
    const int z = start(0) + i;
    if (z < 0 || z >= vol.dims(0)) continue;
    for (int j = 0; j < crop_dims(1); ++j) {
      const int y = start(1) + j;
      if (y < 0 || y >= vol.dims(1)) continue;
      for (int k = 0; k < crop_dims(2); ++k) {
        const int x = start(2) + k;
        if (x < 0 || x >= vol.dims(2)) continue;
        out(i, j, k) = vol(z, y, x);
      }
    }
  }
  return out;
}

template Volume<float> resample_trilinear(const Volume<float>&, const Dims3&);
template Volume<double> resample_trilinear(const Volume<double>&, const Dims3&);
template Volume<float> normalize_hu(const Volume<float>&, double, double);
template Volume<double> normalize_hu(const Volume<double>&, double, double);
template Volume<float> crop_subvolume(const Volume<float>&, const Point3&, const Dims3&, float);
template Volume<double> crop_subvolume(const Volume<double>&, const Point3&, const Dims3&, double);
template Volume<std::uint8_t> crop_subvolume(const Volume<std::uint8_t>&, const Point3&,
                                             const Dims3&, std::uint8_t);

}  // namespace gaaf
