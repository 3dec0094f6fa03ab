#include "gaaf/run_config.hpp"

#include <charconv>

#include "gaaf/byte_io.hpp"

namespace gaaf {

using nlohmann::json;

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"in", "input path for the subcommand"},
      {"out", "output directory"},
      {"checkpoint", "checkpoint file (infer) or training run directory (test)"},
      {"results", "results CSV written by infer (eval)"},
      {"seed", "base seed for phantoms, folds, initialisation and augmentation"},
      {"n_samples", "number of phantoms"},
      {"full_dims", "phantom volume dims, ZxYxX"},
      {"spacing_mm", "phantom voxel spacing in mm, [z, y, x]"},
      {"semi_axis_min_vox", "smallest ellipsoid semi-axis, full-res voxels"},
      {"semi_axis_max_vox", "largest ellipsoid semi-axis, full-res voxels"},
      {"margin_vox", "clearance between ellipsoid and volume edge, full-res voxels"},
      {"contrast", "ellipsoid intensity above background (HU)"},
      {"noise_std", "background noise std (HU)"},
      {"target_dims", "downsampled network input dims, ZxYxX"},
      {"window_lo", "HU mapped to 0"},
      {"window_hi", "HU mapped to 1"},
      {"sigma_vox", "target heatmap sigma, downsampled voxels"},
      {"levels", "encoder depth"},
      {"base_channels", "channels at the first level"},
      {"attention", "attention gates on the skip connections (on/off)"},
      {"dropout", "bottleneck spatial dropout probability"},
      {"epochs", "training epochs per fold"},
      {"batch_size", "samples per optimiser step"},
      {"lr", "Adam learning rate"},
      {"w2", "weight of the squared-error loss term"},
      {"w1", "weight of the absolute-error loss term"},
      {"shift_max_vox", "largest augmentation shift per axis, downsampled voxels, ZxYxX"},
      {"flip_prob", "probability of a left-right flip"},
      {"folds", "cross-validation folds"},
      {"fold", "train only this fold (-1 = all)"},
      {"method", "point extraction: argmax or fit"},
      {"tau", "relative threshold for the Gaussian fit"},
      {"crop_dims", "crop size around the located point, ZxYxX (empty = no crop)"},
  };
  return keys;
}

Dims3 parse_dims(std::string_view text) {
  Dims3 d;
  const char* p = text.data();
  const char* end = p + text.size();
  for (int a = 0; a < 3; ++a) {
    const auto r = std::from_chars(p, end, d(a));
    if (r.ec != std::errc() || (a < 2 && (r.ptr == end || (*r.ptr != 'x' && *r.ptr != 'X'))))
      throw UsageError("expected dims as ZxYxX, got '" + std::string(text) + "'");
    p = r.ptr + (a < 2 ? 1 : 0);
  }
  if (p != end) throw UsageError("expected dims as ZxYxX, got '" + std::string(text) + "'");
  return d;
}

namespace {

json dims_json(const Eigen::Array3i& d) { return {d(0), d(1), d(2)}; }

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0))
        throw UsageError("");
    } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!j.is_number_integer()) throw UsageError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j.is_number()) throw UsageError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j.is_string()) throw UsageError("");
    }
    return j.get<T>();
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "' has a bad value: " + j.dump());
  }
}

Eigen::Array3i get_dims(const json& j, const std::string& key) {
  if (j.is_string()) return parse_dims(j.get<std::string>());
  if (j.is_array() && j.size() == 3)
    return {get_as<int>(j[0], key), get_as<int>(j[1], key), get_as<int>(j[2], key)};
  throw UsageError("config key '" + key + "' needs ZxYxX or [z, y, x], got " + j.dump());
}

bool get_switch(const json& j, const std::string& key) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "on" || s == "true") return true;
    if (s == "off" || s == "false") return false;
  }
  throw UsageError("config key '" + key + "' needs on/off, got " + j.dump());
}

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["in"] = c.in;
  j["out"] = c.out;
  j["checkpoint"] = c.checkpoint;
  j["results"] = c.results;
  j["seed"] = c.seed;
  j["n_samples"] = c.phantom.n_samples;
  j["full_dims"] = dims_json(c.phantom.full_dims);
  j["spacing_mm"] = {c.phantom.spacing_mm(0), c.phantom.spacing_mm(1), c.phantom.spacing_mm(2)};
  j["semi_axis_min_vox"] = c.phantom.semi_axis_min_vox;
  j["semi_axis_max_vox"] = c.phantom.semi_axis_max_vox;
  j["margin_vox"] = c.phantom.margin_vox;
  j["contrast"] = c.phantom.contrast;
  j["noise_std"] = c.phantom.noise_std;
  j["target_dims"] = dims_json(c.preprocess.target_dims);
  j["window_lo"] = c.preprocess.window.lo;
  j["window_hi"] = c.preprocess.window.hi;
  j["sigma_vox"] = c.train.sigma_vox;
  j["levels"] = c.model.levels;
  j["base_channels"] = c.model.base_channels;
  j["attention"] = c.model.attention;
  j["dropout"] = c.model.dropout_p;
  j["epochs"] = c.train.epochs;
  j["batch_size"] = c.train.batch_size;
  j["lr"] = c.train.lr;
  j["w2"] = c.train.w2;
  j["w1"] = c.train.w1;
  j["shift_max_vox"] = dims_json(c.train.shift_max_vox);
  j["flip_prob"] = c.train.flip_prob;
  j["folds"] = c.train.folds;
  j["fold"] = c.fold;
  j["method"] = c.method == Extraction::Argmax ? "argmax" : "fit";
  j["tau"] = c.tau;
  j["crop_dims"] = c.cropping() ? dims_json(c.crop_dims) : json("");
  return j;
}

RunConfig run_config_from_json(const json& j) {
  json full = to_json(RunConfig{});
  merge_config(full, j, "config");
  RunConfig c;
  c.in = get_as<std::string>(full["in"], "in");
  c.out = get_as<std::string>(full["out"], "out");
  c.checkpoint = get_as<std::string>(full["checkpoint"], "checkpoint");
  c.results = get_as<std::string>(full["results"], "results");
  c.seed = get_as<std::uint64_t>(full["seed"], "seed");

  c.phantom.n_samples = get_as<int>(full["n_samples"], "n_samples");
  c.phantom.full_dims = get_dims(full["full_dims"], "full_dims");
  const auto& sp = full["spacing_mm"];
  if (!sp.is_array() || sp.size() != 3)
    throw UsageError("config key 'spacing_mm' needs [z, y, x], got " + sp.dump());
  for (int a = 0; a < 3; ++a) c.phantom.spacing_mm(a) = get_as<double>(sp[a], "spacing_mm");
  c.phantom.semi_axis_min_vox = get_as<double>(full["semi_axis_min_vox"], "semi_axis_min_vox");
  c.phantom.semi_axis_max_vox = get_as<double>(full["semi_axis_max_vox"], "semi_axis_max_vox");
  c.phantom.margin_vox = get_as<int>(full["margin_vox"], "margin_vox");
  c.phantom.contrast = get_as<double>(full["contrast"], "contrast");
  c.phantom.noise_std = get_as<double>(full["noise_std"], "noise_std");
  c.phantom.seed = c.seed;

  c.preprocess.target_dims = get_dims(full["target_dims"], "target_dims");
  c.preprocess.window = {get_as<double>(full["window_lo"], "window_lo"),
                         get_as<double>(full["window_hi"], "window_hi")};
  c.preprocess.sigma_vox = get_as<double>(full["sigma_vox"], "sigma_vox");

  c.model.levels = get_as<int>(full["levels"], "levels");
  c.model.base_channels = get_as<int>(full["base_channels"], "base_channels");
  c.model.attention = get_switch(full["attention"], "attention");
  c.model.dropout_p = get_as<double>(full["dropout"], "dropout");
  c.model.in_dims = c.preprocess.target_dims;

  c.train.epochs = get_as<int>(full["epochs"], "epochs");
  c.train.batch_size = get_as<int>(full["batch_size"], "batch_size");
  c.train.lr = get_as<double>(full["lr"], "lr");
  c.train.w2 = get_as<double>(full["w2"], "w2");
  c.train.w1 = get_as<double>(full["w1"], "w1");
  c.train.sigma_vox = c.preprocess.sigma_vox;
  c.train.shift_max_vox = get_dims(full["shift_max_vox"], "shift_max_vox");
  c.train.flip_prob = get_as<double>(full["flip_prob"], "flip_prob");
  c.train.folds = get_as<int>(full["folds"], "folds");
  c.train.seed = c.seed;
  c.fold = get_as<int>(full["fold"], "fold");

  c.method = parse_extraction(get_as<std::string>(full["method"], "method"));
  c.tau = get_as<double>(full["tau"], "tau");
  const auto& crop = full["crop_dims"];
  if (!(crop.is_null() || (crop.is_string() && crop.get<std::string>().empty()))) {
    c.crop_dims = get_dims(crop, "crop_dims");
    if (!c.cropping()) throw UsageError("crop_dims must be positive");
  }
  return c;
}

void merge_config(json& base, const json& patch, std::string_view source) {
  if (!patch.is_object())
    throw UsageError(std::string(source) + ": configuration must be a JSON object");
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key)) throw UsageError(std::string(source) + ": unknown key '" + key + "'");
    base[key] = value;
  }
}

json parse_override_value(std::string_view text) {
  const json j = json::parse(text.begin(), text.end(), nullptr, false);
  return j.is_discarded() ? json(std::string(text)) : j;
}

RunConfig resolve_config(const std::filesystem::path& file,
                         const std::vector<std::pair<std::string, json>>& overrides) {
  json merged = to_json(RunConfig{});
  if (!file.empty()) {
    const auto bytes = byte_io::read_file(file);
    const json parsed = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (parsed.is_discarded()) throw UsageError(file.string() + ": not valid JSON");
    merge_config(merged, parsed, file.string());
  }
  for (const auto& [key, value] : overrides) merge_config(merged, json{{key, value}}, "command line");
  return run_config_from_json(merged);
}

}  // namespace gaaf
