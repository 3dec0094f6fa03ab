#pragma once

// Synthetic ellipsoid phantoms with known centres, for end-to-end runs
// without clinical data.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gaaf/volume.hpp"

namespace gaaf {

struct PhantomSpec {
  Dims3 full_dims{64, 128, 128};
  Spacing3 spacing_mm{1.0, 1.0, 1.0};
  int n_samples = 40;
  double semi_axis_min_vox = 6.0;
  double semi_axis_max_vox = 12.0;
  /// Clearance kept between the ellipsoid's bounding box and the volume edge.
  int margin_vox = 8;
  double contrast = 1000.0;
  double noise_std = 100.0;
  std::uint64_t seed = 0;

  /// Throws UsageError when the ellipsoid cannot fit with the requested margin.
  void validate() const;
};

struct PhantomRecord {
  std::string id;
  Eigen::Vector3d center;
  Eigen::Vector3d semi_axes;
  std::int64_t mask_voxels = 0;
};

struct PhantomManifest {
  PhantomSpec spec;
  std::vector<PhantomRecord> samples;
};

std::string phantom_id(int index);

/// Writes `<id>_img.gvol`, `<id>_mask.gvol` and phantoms.json into out_dir.
PhantomManifest synth_generate(const PhantomSpec& spec, const std::filesystem::path& out_dir);

std::string phantom_manifest_json(const PhantomManifest& m);
PhantomManifest parse_phantom_manifest(std::string_view text);

}  // namespace gaaf
