#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "gaaf/heatmap.hpp"
#include "gaaf/locator.hpp"
#include "gaaf/volume_io.hpp"

namespace gaaf {

enum class Extraction { Argmax, GaussianFit };

/// "argmax" or "gaussian_fit".
std::string to_string(Extraction method);
/// Accepts "argmax", "fit" and "gaussian_fit"; anything else is a UsageError.
Extraction parse_extraction(std::string_view text);

/// Downsampled, normalised input -> same-dims heatmap.
using HeatmapPredictor = std::function<Heatmap<float>(const ImageVolume&)>;

/// Eval-mode forward of a frozen snapshot of `model`.
HeatmapPredictor model_predictor(const LocatorModel<float>& model);

Point3 extract_point(const Heatmap<float>& h, Extraction method, double tau = 0.5);

struct LocateOptions {
  Dims3 target_dims{64, 128, 128};
  HuWindow window;
  Extraction method = Extraction::GaussianFit;
  double tau = 0.5;
};

struct LocalisationResult {
  std::string source_id;
  Point3 point_full;          ///< FullRes frame
  Eigen::Vector3d point_mm;   ///< point_full * spacing, origin at the centre of voxel 0
  Extraction method = Extraction::GaussianFit;
  double peak_value = 0.0;
  bool clamped = false;       ///< extraction fell outside the grid and was pulled back
};

/// Extracts from a downsampled heatmap and maps the point into `full`
/// (clamped to the grid).
LocalisationResult localise_heatmap(const Heatmap<float>& h, const FrameTag& full,
                                    const Spacing3& full_spacing_mm, Extraction method,
                                    double tau, std::string source_id = {});

/// normalise -> resample to target_dims -> predict -> extract -> rescale.
LocalisationResult locate(const HeatmapPredictor& predictor, const ImageVolume& full_volume,
                          const LocateOptions& options, std::string source_id = {});

/// As above; throws ShapeError when the model was built for other dims.
LocalisationResult locate(const LocatorModel<float>& model, const ImageVolume& full_volume,
                          const LocateOptions& options, std::string source_id = {});

struct CropResult {
  ImageVolume crop;
  LocalisationResult result;
  Dims3 crop_dims;
};

CropResult locate_and_crop(const HeatmapPredictor& predictor, const ImageVolume& full_volume,
                           const LocateOptions& options, const Dims3& crop_dims, float pad_value,
                           std::string source_id = {});

/// {"id","center_full","crop_dims","method","full_dims","point_mm","peak_value","clamped"}
std::string sidecar_json(const LocalisationResult& result, const Dims3& crop_dims);
LocalisationResult parse_sidecar(std::string_view text, Dims3* crop_dims = nullptr);

/// <dir>/<id>_crop.gvol and <dir>/<id>_crop.json
void write_crop(const CropResult& crop, const std::filesystem::path& dir);

/// sqrt(sum(((pred - gold) * spacing)^2)); both points must share one FullRes frame.
double euclidean_distance_mm(const Point3& pred, const Point3& gold, const Spacing3& spacing_mm);

struct EvalSummary {
  std::size_t n = 0;
  double median_mm = 0.0;
  double mean_mm = 0.0;
  double std_mm = 0.0;  ///< population
  double iqr_mm = 0.0;  ///< linear-interpolation quartiles
  std::vector<double> distances;
};

/// Throws DataError on an empty list.
EvalSummary summarize(std::vector<double> distances_mm);

/// One row of the `id,method,z,y,x,dist_mm` results table; dist_mm is NaN
/// when no gold standard was available.
struct ResultRow {
  std::string id;
  Extraction method = Extraction::GaussianFit;
  Eigen::Vector3d point_full = Eigen::Vector3d::Zero();
  double dist_mm = std::numeric_limits<double>::quiet_NaN();
};

std::string results_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_results_csv(std::string_view text);

}  // namespace gaaf
