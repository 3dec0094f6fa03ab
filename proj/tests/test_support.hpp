#pragma once

// Helpers shared by the unit tests: scratch directories and independent
// reference implementations used as oracles.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "gaaf/volume.hpp"

namespace gaaf::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("gaaf_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Volume<float> random_volume(std::mt19937_64& rng, int max_dim = 6) {
  std::uniform_int_distribution<int> dim(1, max_dim);
  std::uniform_real_distribution<double> spacing(0.25, 4.0);
  std::normal_distribution<float> value(0.0f, 500.0f);
  Volume<float> v(Dims3(dim(rng), dim(rng), dim(rng)),
                  Spacing3(spacing(rng), spacing(rng), spacing(rng)));
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data(i) = value(rng);
  return v;
}

/// Trilinear value of `vol` at continuous index `p`, edge-clamped, written as
/// an explicit eight-corner weighted sum.
inline double trilinear_oracle(const Volume<float>& vol, double pz, double py, double px) {
  const double p[3] = {pz, py, px};
  int lo[3], hi[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    const double c = std::min(std::max(p[a], 0.0), static_cast<double>(vol.dims(a) - 1));
    lo[a] = static_cast<int>(std::floor(c));
    hi[a] = std::min(lo[a] + 1, vol.dims(a) - 1);
    t[a] = c - lo[a];
  }
  double acc = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    const int bz = (corner >> 2) & 1, by = (corner >> 1) & 1, bx = corner & 1;
    const double w = (bz ? t[0] : 1 - t[0]) * (by ? t[1] : 1 - t[1]) * (bx ? t[2] : 1 - t[2]);
    acc += w * vol(bz ? hi[0] : lo[0], by ? hi[1] : lo[1], bx ? hi[2] : lo[2]);
  }
  return acc;
}

}  // namespace gaaf::testing
