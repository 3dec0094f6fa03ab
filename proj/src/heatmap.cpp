#include "gaaf/heatmap.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace gaaf {

template <typename T>
Heatmap<T> generate_heatmap(const Dims3& dims, const Point3& center, const HeatmapSpec& spec,
                            const Spacing3& spacing_mm) {
  if (!(spec.sigma_vox > 0.0)) throw UsageError("heatmap sigma must be > 0");
  require_frame_dims(center, dims, "generate_heatmap");
  if (!center.inside_grid())
    throw FrameMismatchError("generate_heatmap: center lies outside grid " + to_string(dims));

  Heatmap<T> h(dims, spacing_mm);
  const double inv_two_var = 1.0 / (2.0 * spec.sigma_vox * spec.sigma_vox);
  const Eigen::Vector3d& c = center.coords;

  // Squared offsets per axis.
  std::array<std::vector<double>, 3> g;
  for (int a = 0; a < 3; ++a) {
    g[a].resize(static_cast<std::size_t>(dims(a)));
    for (int i = 0; i < dims(a); ++i) {
      const double d = i - c(a);
      g[a][static_cast<std::size_t>(i)] = d * d;
    }
  }
  for (int z = 0; z < dims(0); ++z)
    for (int y = 0; y < dims(1); ++y)
      for (int x = 0; x < dims(2); ++x) {
        const double r2 = g[0][static_cast<std::size_t>(z)] + g[1][static_cast<std::size_t>(y)] +
                          g[2][static_cast<std::size_t>(x)];
        h(z, y, x) = static_cast<T>(std::exp(-r2 * inv_two_var));
      }
  return h;
}

template <typename T>
Point3 argmax_location(const Heatmap<T>& h, FrameKind kind) {
  h.validate();
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < h.size(); ++i)
    if (h.data(i) > h.data(best)) best = i;
  const Eigen::Index x = best % h.dims(2);
  const Eigen::Index y = (best / h.dims(2)) % h.dims(1);
  const Eigen::Index z = best / (static_cast<Eigen::Index>(h.dims(2)) * h.dims(1));
  return {Eigen::Vector3d(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)),
          FrameTag{kind, h.dims}};
}

template <typename T>
Point3 gaussian_fit_location(const Heatmap<T>& h, double tau, FrameKind kind) {
  h.validate();
  if (!(tau >= 0.0 && tau < 1.0)) throw UsageError("gaussian fit threshold must lie in [0, 1)");
  const double peak = std::max(0.0, static_cast<double>(h.data.maxCoeff()));
  if (!(peak > 0.0)) throw NoPeakError("heatmap has no positive values");

  const double cut = tau * peak;
  Eigen::Vector3d moment = Eigen::Vector3d::Zero();
  double mass = 0.0;
  for (int z = 0; z < h.dims(0); ++z)
    for (int y = 0; y < h.dims(1); ++y)
      for (int x = 0; x < h.dims(2); ++x) {
        const double w = std::max(0.0, static_cast<double>(h(z, y, x)));
        if (w <= 0.0 || w < cut) continue;
        moment += w * Eigen::Vector3d(z, y, x);
        mass += w;
      }
  return {moment / mass, FrameTag{kind, h.dims}};
}

Point3 rescale_point(const Point3& p, const FrameTag& to) {
  const Eigen::Array3d ratio = to.dims.cast<double>() / p.frame.dims.cast<double>();
  Point3 out;
  out.frame = to;
  out.coords = ((p.coords.array() + 0.5) * ratio - 0.5).matrix();
  return out;
}

template <typename T>
Volume<T> flip_lr(const Volume<T>& vol) {
  vol.validate();
  Volume<T> out = vol;
  const Eigen::Index nx = vol.dims(2);
  const Eigen::Index rows = vol.size() / nx;
  for (Eigen::Index r = 0; r < rows; ++r)
    out.data.segment(r * nx, nx) = vol.data.segment(r * nx, nx).reverse();
  return out;
}

Point3 flip_lr_point(const Point3& p) {
  Point3 out = p;
  out.coords(2) = (p.frame.dims(2) - 1) - p.coords(2);
  return out;
}

template Heatmap<float> generate_heatmap(const Dims3&, const Point3&, const HeatmapSpec&,
                                         const Spacing3&);
template Heatmap<double> generate_heatmap(const Dims3&, const Point3&, const HeatmapSpec&,
                                          const Spacing3&);
template Point3 argmax_location(const Heatmap<float>&, FrameKind);
template Point3 argmax_location(const Heatmap<double>&, FrameKind);
template Point3 gaussian_fit_location(const Heatmap<float>&, double, FrameKind);
template Point3 gaussian_fit_location(const Heatmap<double>&, double, FrameKind);
template Volume<float> flip_lr(const Volume<float>&);
template Volume<double> flip_lr(const Volume<double>&);
template Volume<std::uint8_t> flip_lr(const Volume<std::uint8_t>&);

}  // namespace gaaf
