#include "gaaf/synth.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "gaaf/byte_io.hpp"
#include "gaaf/log.hpp"
#include "gaaf/train.hpp"
#include "gaaf/volume_io.hpp"
#include "json.hpp"

namespace gaaf {

using nlohmann::json;

void PhantomSpec::validate() const {
  if ((full_dims < 1).any()) throw UsageError("phantom dims must be >= 1");
  if (!(spacing_mm > 0.0).all()) throw UsageError("phantom spacing must be > 0");
  if (n_samples < 1) throw UsageError("n_samples must be >= 1");
  if (!(semi_axis_min_vox > 0.0) || semi_axis_max_vox < semi_axis_min_vox)
    throw UsageError("semi-axis range needs 0 < min <= max");
  if (margin_vox < 0) throw UsageError("margin_vox must be >= 0");
  if (!(noise_std >= 0.0) || !std::isfinite(contrast)) throw UsageError("bad contrast or noise_std");
  for (int a = 0; a < 3; ++a) {
    const double room = (full_dims(a) - 1) / 2.0;
    if (semi_axis_max_vox + margin_vox > room)
      throw UsageError("ellipsoid with semi-axis " + std::to_string(semi_axis_max_vox) +
                       " and margin " + std::to_string(margin_vox) + " does not fit along axis " +
                       std::to_string(a) + " of " + to_string(full_dims));
  }
}

std::string phantom_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%03d", index);
  return buf;
}

PhantomManifest synth_generate(const PhantomSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  PhantomManifest manifest{spec, {}};
  for (int i = 0; i < spec.n_samples; ++i) {
    std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> axis(spec.semi_axis_min_vox, spec.semi_axis_max_vox);
    PhantomRecord rec;
    rec.id = phantom_id(i);
    for (int a = 0; a < 3; ++a) rec.semi_axes(a) = axis(rng);
    for (int a = 0; a < 3; ++a) {
      const double lo = rec.semi_axes(a) + spec.margin_vox;
      const double hi = spec.full_dims(a) - 1 - rec.semi_axes(a) - spec.margin_vox;
      rec.center(a) = std::uniform_real_distribution<double>(lo, hi)(rng);
    }

    ImageVolume image(spec.full_dims, spec.spacing_mm);
    MaskVolume mask(spec.full_dims, spec.spacing_mm);
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    const Eigen::Array3d inv_r = rec.semi_axes.array().inverse();
    for (int z = 0; z < spec.full_dims(0); ++z)
      for (int y = 0; y < spec.full_dims(1); ++y)
        for (int x = 0; x < spec.full_dims(2); ++x) {
          const Eigen::Array3d d =
              (Eigen::Array3d(z, y, x) - rec.center.array()) * inv_r;
          const bool inside = d.square().sum() <= 1.0;
          const double n = spec.noise_std > 0.0 ? noise(rng) : 0.0;
          image(z, y, x) = static_cast<float>(n + (inside ? spec.contrast : 0.0));
          mask(z, y, x) = inside ? 1 : 0;
          rec.mask_voxels += inside;
        }
    write_gvol(image, out_dir / (rec.id + "_img.gvol"));
    write_gvol(mask, out_dir / (rec.id + "_mask.gvol"));
    manifest.samples.push_back(rec);
  }
  byte_io::write_text(out_dir / "phantoms.json", phantom_manifest_json(manifest));
  log_info("wrote " + std::to_string(spec.n_samples) + " phantoms to " + out_dir.string());
  return manifest;
}

std::string phantom_manifest_json(const PhantomManifest& m) {
  const auto& s = m.spec;
  json samples = json::array();
  for (const auto& r : m.samples)
    samples.push_back({{"id", r.id},
                       {"center", {r.center(0), r.center(1), r.center(2)}},
                       {"semi_axes", {r.semi_axes(0), r.semi_axes(1), r.semi_axes(2)}},
                       {"mask_voxels", r.mask_voxels}});
  const json j = {{"full_dims", {s.full_dims(0), s.full_dims(1), s.full_dims(2)}},
                  {"spacing_mm", {s.spacing_mm(0), s.spacing_mm(1), s.spacing_mm(2)}},
                  {"n_samples", s.n_samples},
                  {"semi_axis_min_vox", s.semi_axis_min_vox},
                  {"semi_axis_max_vox", s.semi_axis_max_vox},
                  {"margin_vox", s.margin_vox},
                  {"contrast", s.contrast},
                  {"noise_std", s.noise_std},
                  {"seed", s.seed},
                  {"samples", samples}};
  return j.dump(2) + "\n";
}

PhantomManifest parse_phantom_manifest(std::string_view text) {
  try {
    const json j = json::parse(text);
    PhantomManifest m;
    auto& s = m.spec;
    const auto& d = j.at("full_dims");
    s.full_dims = Dims3(d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>());
    const auto& sp = j.at("spacing_mm");
    s.spacing_mm = Spacing3(sp.at(0).get<double>(), sp.at(1).get<double>(), sp.at(2).get<double>());
    s.n_samples = j.at("n_samples").get<int>();
    s.semi_axis_min_vox = j.at("semi_axis_min_vox").get<double>();
    s.semi_axis_max_vox = j.at("semi_axis_max_vox").get<double>();
    s.margin_vox = j.at("margin_vox").get<int>();
    s.contrast = j.at("contrast").get<double>();
    s.noise_std = j.at("noise_std").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& r : j.at("samples")) {
      PhantomRecord rec;
      rec.id = r.at("id").get<std::string>();
      for (int a = 0; a < 3; ++a) {
        rec.center(a) = r.at("center").at(a).get<double>();
        rec.semi_axes(a) = r.at("semi_axes").at(a).get<double>();
      }
      rec.mask_voxels = r.at("mask_voxels").get<std::int64_t>();
      m.samples.push_back(rec);
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("phantom manifest: ") + e.what());
  }
}

}  // namespace gaaf
