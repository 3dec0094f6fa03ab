#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gaaf/heatmap.hpp"
#include "gaaf/infer.hpp"
#include "gaaf/locator.hpp"
#include "gaaf/volume_io.hpp"

namespace gaaf {

// ---- dataset preparation -------------------------------------------------

struct PreprocessOptions {
  Dims3 target_dims{64, 128, 128};
  HuWindow window;
  double sigma_vox = 3.0;
};

struct ManifestEntry {
  std::string id;
  std::string input_file;  ///< relative to the manifest directory
  Dims3 full_dims;
  Spacing3 full_spacing_mm;
  Eigen::Vector3d center_full;
  Eigen::Vector3d center_ds;
};

struct ManifestWarning {
  std::string id;
  std::string message;
};

struct Manifest {
  PreprocessOptions options;
  std::vector<ManifestEntry> entries;
  std::vector<ManifestWarning> warnings;
};

std::string manifest_json(const Manifest& manifest);
Manifest parse_manifest(std::string_view text);
/// <data_dir>/manifest.json
Manifest read_manifest(const std::filesystem::path& data_dir);

/// Pairs <id>_img.gvol with <id>_mask.gvol in raw_dir, writes <id>_ds.gvol
/// and manifest.json into out_dir. Empty masks are skipped with a warning;
/// a missing pair member is a DataError.
Manifest preprocess_dataset(const std::filesystem::path& raw_dir,
                            const std::filesystem::path& out_dir, const PreprocessOptions& options);

struct TrainingSample {
  std::string source_id;
  ImageVolume input;  ///< downsampled, normalised
  Point3 center_ds;
  Point3 center_full;
  Dims3 full_dims;
  Spacing3 full_spacing_mm;
};

std::vector<TrainingSample> load_samples(const std::filesystem::path& data_dir);

// ---- cross-validation and training ---------------------------------------

struct TrainConfig {
  int epochs = 200;
  int batch_size = 2;
  double lr = 1e-3;
  double w2 = 1.0;
  double w1 = 0.1;
  double sigma_vox = 3.0;
  Eigen::Array3i shift_max_vox{5, 5, 5};
  double flip_prob = 0.5;
  int folds = 5;
  std::uint64_t seed = 0;

  /// Throws UsageError on out-of-range fields.
  void validate() const;
};

struct FoldSplit {
  std::vector<std::vector<std::string>> validation;  ///< one id list per fold

  int k() const { return static_cast<int>(validation.size()); }
  /// Every id outside validation[fold], in split order.
  std::vector<std::string> training(int fold) const;
};

/// Seeded shuffle then round-robin: fold sizes differ by at most one.
FoldSplit make_folds(std::vector<std::string> ids, int k, std::uint64_t seed);
std::string fold_split_json(const FoldSplit& split);
FoldSplit parse_fold_split(std::string_view text);

/// Mixes a base seed with stream identifiers (fold, purpose) into an
/// independent 64-bit seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Moves the contents by `delta` voxels; uncovered voxels take `pad`.
ImageVolume shift_volume(const ImageVolume& vol, const Eigen::Array3i& delta, float pad);

struct AugmentedSample {
  ImageVolume input;
  Heatmap<float> target;
  Point3 center;
  Eigen::Array3i shift = Eigen::Array3i::Zero();
  bool flipped = false;
};

/// Integer shift drawn per axis from [-shift_max, shift_max] and clamped so
/// the centre stays on the grid, then a left-right flip with flip_prob. The
/// target is generated analytically at the moved centre.
AugmentedSample augment_sample(const TrainingSample& sample, const TrainConfig& config,
                               ad::Rng& rng);

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

std::string history_json(const TrainHistory& history);

struct FoldTrainResult {
  LocatorModel<float> best;  ///< parameters at the epoch with the lowest validation loss
  TrainHistory history;
};

using EpochCallback = std::function<void(int epoch, double train_loss, double val_loss)>;

/// Eval-mode loss of the model on un-augmented samples.
double evaluate_loss(const LocatorModel<float>& model,
                     std::span<const TrainingSample* const> samples, const TrainConfig& config);

/// Trains one fold from scratch. Deterministic for a fixed config.seed.
/// Throws DivergenceError on a non-finite loss.
FoldTrainResult train_fold(const std::vector<TrainingSample>& samples, const FoldSplit& split,
                           int fold, const LocatorConfig& model_config,
                           const TrainConfig& train_config, const EpochCallback& on_epoch = {});

// ---- per-fold testing -----------------------------------------------------

struct SampleError {
  std::string id;
  int fold = 0;
  Extraction method = Extraction::GaussianFit;
  Point3 pred_full;
  Eigen::Vector3d delta_mm;  ///< (pred - gold) * spacing
  double dist_mm = 0.0;
};

struct FoldReport {
  int fold = 0;
  EvalSummary summary;
};

struct TestReport {
  Extraction method = Extraction::GaussianFit;
  std::vector<SampleError> samples;
  std::vector<FoldReport> folds;
  EvalSummary pooled;
  std::vector<int> ranking;  ///< folds by ascending median error
};

/// Runs predictors[f] over validation fold f and scores every sample against
/// its full-resolution gold centre.
TestReport test_folds(const std::vector<TrainingSample>& samples, const FoldSplit& split,
                      const std::vector<HeatmapPredictor>& predictors, Extraction method,
                      double tau = 0.5);

std::string test_report_json(const TestReport& report);
/// Header `id,fold,method,dz,dy,dx,dist_mm`; d columns in mm.
std::string test_report_csv(const TestReport& report);

}  // namespace gaaf
