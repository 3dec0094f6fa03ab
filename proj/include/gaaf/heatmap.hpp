#pragma once

#include "gaaf/volume.hpp"

namespace gaaf {

/// Real-valued grid; generated targets lie in [0, 1], network outputs are unconstrained.
template <typename T>
using Heatmap = Volume<T>;

struct HeatmapSpec {
  double sigma_vox = 3.0;  ///< isotropic standard deviation, downsampled voxels
};

/// h(v) = exp(-|v - c|^2 / (2 sigma^2)) at every integer voxel v; peak is exactly 1 on-grid.
template <typename T>
Heatmap<T> generate_heatmap(const Dims3& dims, const Point3& center, const HeatmapSpec& spec,
                            const Spacing3& spacing_mm = Spacing3::Ones());

/// Integer position of the largest element; ties go to the lowest linear index.
template <typename T>
Point3 argmax_location(const Heatmap<T>& h, FrameKind kind = FrameKind::Downsampled);

/// Value-weighted centroid of the voxels at or above tau * max after clamping
/// negatives to zero. Throws NoPeakError when nothing is positive.
template <typename T>
Point3 gaussian_fit_location(const Heatmap<T>& h, double tau = 0.5,
                             FrameKind kind = FrameKind::Downsampled);

/// Maps p into frame `to` per axis: x_to = (x_from + 0.5) * to / from - 0.5.
Point3 rescale_point(const Point3& p, const FrameTag& to);

/// Mirror along the x (last) axis.
template <typename T>
Volume<T> flip_lr(const Volume<T>& vol);

/// x -> (X - 1) - x in the point's own frame.
Point3 flip_lr_point(const Point3& p);

}  // namespace gaaf
