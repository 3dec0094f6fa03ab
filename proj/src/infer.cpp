#include "gaaf/infer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "gaaf/byte_io.hpp"
#include "gaaf/log.hpp"
#include "json.hpp"

namespace gaaf {

namespace {

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view field, std::string_view what) {
  if (field.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw DataError("results csv: bad number '" + std::string(field) + "' in " + std::string(what));
  return v;
}

/// Linear interpolation between order statistics at position q * (n - 1).
double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

nlohmann::json vec3(const Eigen::Vector3d& v) { return {v(0), v(1), v(2)}; }
nlohmann::json vec3(const Dims3& v) { return {v(0), v(1), v(2)}; }

}  // namespace

std::string to_string(Extraction method) {
  return method == Extraction::Argmax ? "argmax" : "gaussian_fit";
}

Extraction parse_extraction(std::string_view text) {
  if (text == "argmax") return Extraction::Argmax;
  if (text == "fit" || text == "gaussian_fit") return Extraction::GaussianFit;
  throw UsageError("unknown extraction method '" + std::string(text) +
                   "' (expected argmax or fit)");
}

HeatmapPredictor model_predictor(const LocatorModel<float>& model) {
  auto frozen = std::make_shared<const LocatorModel<float>>(model.clone());
  return [frozen](const ImageVolume& input) {
    ad::Rng unused(0);
    const auto x = volumes_to_tensor<float>(std::span<const ImageVolume>(&input, 1));
    return tensor_to_volume(forward(*frozen, x, ad::Mode::Eval, unused), 0, input.spacing_mm);
  };
}

Point3 extract_point(const Heatmap<float>& h, Extraction method, double tau) {
  return method == Extraction::Argmax ? argmax_location(h) : gaussian_fit_location(h, tau);
}

LocalisationResult localise_heatmap(const Heatmap<float>& h, const FrameTag& full,
                                    const Spacing3& full_spacing_mm, Extraction method,
                                    double tau, std::string source_id) {
  h.validate();
  LocalisationResult r;
  r.source_id = std::move(source_id);
  r.method = method;
  r.peak_value = h.data.maxCoeff();
  Point3 p = rescale_point(extract_point(h, method, tau), full);
  for (int a = 0; a < 3; ++a) {
    const double hi = full.dims(a) - 1;
    const double c = std::clamp(p.coords(a), 0.0, hi);
    if (c != p.coords(a)) r.clamped = true;
    p.coords(a) = c;
  }
  if (r.clamped)
    log_warn("extracted point for '" + r.source_id + "' fell outside the grid and was clamped");
  r.point_full = p;
  r.point_mm = (p.coords.array() * full_spacing_mm).matrix();
  return r;
}

LocalisationResult locate(const HeatmapPredictor& predictor, const ImageVolume& full_volume,
                          const LocateOptions& options, std::string source_id) {
  full_volume.validate();
  const auto input = resample_trilinear(
      normalize_hu(full_volume, options.window.lo, options.window.hi), options.target_dims);
  const auto h = predictor(input);
  if (!same_dims(h.dims, options.target_dims))
    throw ShapeError("predictor returned dims " + to_string(h.dims) + ", expected " +
                     to_string(options.target_dims));
  return localise_heatmap(h, FrameTag::full_res(full_volume.dims), full_volume.spacing_mm,
                          options.method, options.tau, std::move(source_id));
}

LocalisationResult locate(const LocatorModel<float>& model, const ImageVolume& full_volume,
                          const LocateOptions& options, std::string source_id) {
  if (!same_dims(model.config.in_dims, options.target_dims))
    throw ShapeError("model expects input dims " + to_string(model.config.in_dims) +
                     " but target_dims is " + to_string(options.target_dims));
  return locate(model_predictor(model), full_volume, options, std::move(source_id));
}

CropResult locate_and_crop(const HeatmapPredictor& predictor, const ImageVolume& full_volume,
                           const LocateOptions& options, const Dims3& crop_dims, float pad_value,
                           std::string source_id) {
  CropResult out;
  out.result = locate(predictor, full_volume, options, std::move(source_id));
  out.crop = crop_subvolume(full_volume, out.result.point_full, crop_dims, pad_value);
  out.crop_dims = crop_dims;
  return out;
}

std::string sidecar_json(const LocalisationResult& r, const Dims3& crop_dims) {
  nlohmann::json j = {{"id", r.source_id},
                      {"center_full", vec3(r.point_full.coords)},
                      {"crop_dims", vec3(crop_dims)},
                      {"method", to_string(r.method)},
                      {"full_dims", vec3(r.point_full.frame.dims)},
                      {"point_mm", vec3(r.point_mm)},
                      {"peak_value", r.peak_value},
                      {"clamped", r.clamped}};
  return j.dump(2) + "\n";
}

LocalisationResult parse_sidecar(std::string_view text, Dims3* crop_dims) {
  try {
    const auto j = nlohmann::json::parse(text);
    auto v3 = [&](const char* key) {
      const auto& a = j.at(key);
      return Eigen::Vector3d(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
    };
    auto d3 = [&](const char* key) {
      const auto& a = j.at(key);
      return Dims3(a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>());
    };
    LocalisationResult r;
    r.source_id = j.at("id").get<std::string>();
    r.point_full = {v3("center_full"), FrameTag::full_res(d3("full_dims"))};
    r.method = parse_extraction(j.at("method").get<std::string>());
    r.point_mm = v3("point_mm");
    r.peak_value = j.at("peak_value").get<double>();
    r.clamped = j.at("clamped").get<bool>();
    if (crop_dims) *crop_dims = d3("crop_dims");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("crop sidecar: ") + e.what());
  }
}

void write_crop(const CropResult& crop, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string stem = crop.result.source_id.empty() ? "volume" : crop.result.source_id;
  write_gvol(crop.crop, dir / (stem + "_crop.gvol"));
  byte_io::write_text(dir / (stem + "_crop.json"), sidecar_json(crop.result, crop.crop_dims));
}

double euclidean_distance_mm(const Point3& pred, const Point3& gold, const Spacing3& spacing_mm) {
  if (!(pred.frame == gold.frame) || pred.frame.kind != FrameKind::FullRes)
    throw FrameMismatchError("distance needs both points in one FullRes frame, got " +
                             to_string(pred.frame) + " and " + to_string(gold.frame));
  return ((pred.coords - gold.coords).array() * spacing_mm).matrix().norm();
}

EvalSummary summarize(std::vector<double> distances_mm) {
  if (distances_mm.empty()) throw DataError("summarize: no distances");
  EvalSummary s;
  s.n = distances_mm.size();
  s.distances = distances_mm;
  std::sort(distances_mm.begin(), distances_mm.end());
  // Plain loops: a vectorised reduction over std::vector storage sums in an
  // order that depends on the buffer's alignment.
  const double n = static_cast<double>(distances_mm.size());
  double sum = 0.0, ss = 0.0;
  for (double v : distances_mm) sum += v;
  s.mean_mm = sum / n;
  for (double v : distances_mm) ss += (v - s.mean_mm) * (v - s.mean_mm);
  s.std_mm = std::sqrt(ss / n);
  s.median_mm = quantile_sorted(distances_mm, 0.5);
  s.iqr_mm = quantile_sorted(distances_mm, 0.75) - quantile_sorted(distances_mm, 0.25);
  return s;
}

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << "id,method,z,y,x,dist_mm\n";
  for (const auto& r : rows)
    out << r.id << ',' << to_string(r.method) << ',' << format_double(r.point_full(0)) << ','
        << format_double(r.point_full(1)) << ',' << format_double(r.point_full(2)) << ','
        << format_double(r.dist_mm) << '\n';
  return out.str();
}

std::vector<ResultRow> parse_results_csv(std::string_view text) {
  std::vector<ResultRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "id,method,z,y,x,dist_mm")
    throw DataError("results csv: expected header id,method,z,y,x,dist_mm");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw DataError("results csv: expected 6 fields in '" + line + "'");
    ResultRow r;
    r.id = f[0];
    r.method = parse_extraction(f[1]);
    for (int a = 0; a < 3; ++a) r.point_full(a) = parse_double(f[2 + a], line);
    r.dist_mm = parse_double(f[5], line);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace gaaf
