#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "gaaf/errors.hpp"

namespace gaaf {

/// Voxel counts ordered (z, y, x); x is the patient left-right axis.
using Dims3 = Eigen::Array3i;
/// Physical voxel size in mm, ordered (z, y, x).
using Spacing3 = Eigen::Array3d;

inline Eigen::Index voxel_count(const Dims3& dims) {
  return static_cast<Eigen::Index>(dims(0)) * dims(1) * dims(2);
}

inline bool same_dims(const Dims3& a, const Dims3& b) { return (a == b).all(); }

std::string to_string(const Dims3& dims);

/// Dense 3D scalar grid with x-fastest layout: index = (z * Y + y) * X + x.
template <typename T>
struct Volume {
  using Scalar = T;
  using Storage = Eigen::Array<T, Eigen::Dynamic, 1>;

  Dims3 dims = Dims3::Ones();
  Spacing3 spacing_mm = Spacing3::Ones();
  Storage data;

  Volume() : data(Storage::Zero(1)) {}
  Volume(const Dims3& d, const Spacing3& s, T fill = T(0)) : dims(d), spacing_mm(s) {
    if ((d < 1).any()) throw ShapeError("volume dims must be >= 1, got " + to_string(d));
    if ((s <= 0.0).any()) throw ShapeError("volume spacing must be > 0");
    data = Storage::Constant(voxel_count(d), fill);
  }

  Eigen::Index size() const { return data.size(); }

  Eigen::Index index(Eigen::Index z, Eigen::Index y, Eigen::Index x) const {
    return (z * dims(1) + y) * dims(2) + x;
  }
  T& operator()(Eigen::Index z, Eigen::Index y, Eigen::Index x) { return data(index(z, y, x)); }
  const T& operator()(Eigen::Index z, Eigen::Index y, Eigen::Index x) const {
    return data(index(z, y, x));
  }

  bool contains(Eigen::Index z, Eigen::Index y, Eigen::Index x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < dims(0) && y < dims(1) && x < dims(2);
  }

  /// Throws ShapeError unless dims, spacing and data length are consistent.
  void validate() const {
    if ((dims < 1).any()) throw ShapeError("volume dims must be >= 1, got " + to_string(dims));
    if ((spacing_mm <= 0.0).any()) throw ShapeError("volume spacing must be > 0");
    if (data.size() != voxel_count(dims))
      throw ShapeError("volume data length does not match dims " + to_string(dims));
  }
};

/// Binary mask; every element is 0 or 1.
using MaskVolume = Volume<std::uint8_t>;

enum class FrameKind { FullRes, Downsampled };

/// The voxel-index grid a point lives in.
struct FrameTag {
  FrameKind kind = FrameKind::FullRes;
  Dims3 dims = Dims3::Ones();

  static FrameTag full_res(const Dims3& d) { return {FrameKind::FullRes, d}; }
  static FrameTag downsampled(const Dims3& d) { return {FrameKind::Downsampled, d}; }

  bool operator==(const FrameTag& o) const { return kind == o.kind && same_dims(dims, o.dims); }
};

std::string to_string(const FrameTag& frame);

/// Continuous (z, y, x) position in voxel-index units of an explicit frame.
struct Point3 {
  Eigen::Vector3d coords = Eigen::Vector3d::Zero();
  FrameTag frame;

  bool inside_grid() const {
    for (int a = 0; a < 3; ++a)
      if (coords(a) < 0.0 || coords(a) > frame.dims(a) - 1) return false;
    return true;
  }
};

/// Throws FrameMismatchError when `p` does not live on a grid of `dims`.
void require_frame_dims(const Point3& p, const Dims3& dims, const char* what);

}  // namespace gaaf
