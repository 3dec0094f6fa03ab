#include "gaaf/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "gaaf/autodiff/adam.hpp"
#include "gaaf/byte_io.hpp"
#include "gaaf/log.hpp"
#include "json.hpp"

namespace gaaf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kImageSuffix = "_img.gvol";
constexpr std::string_view kMaskSuffix = "_mask.gvol";
constexpr std::string_view kManifestName = "manifest.json";

json to_json3(const Eigen::Vector3d& v) { return {v(0), v(1), v(2)}; }
json to_json3(const Dims3& v) { return {v(0), v(1), v(2)}; }
json to_json3(const Spacing3& v) { return {v(0), v(1), v(2)}; }

Eigen::Vector3d vec3_from(const json& a) {
  return {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
}
Dims3 dims3_from(const json& a) { return {a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>()}; }

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json summary_json(const EvalSummary& s) {
  return {{"n", s.n},           {"median_mm", s.median_mm}, {"mean_mm", s.mean_mm},
          {"std_mm", s.std_mm}, {"iqr_mm", s.iqr_mm}};
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

// ---- dataset preparation -------------------------------------------------

std::string manifest_json(const Manifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries)
    entries.push_back({{"id", e.id},
                       {"input_file", e.input_file},
                       {"full_dims", to_json3(e.full_dims)},
                       {"full_spacing_mm", to_json3(e.full_spacing_mm)},
                       {"center_full", to_json3(e.center_full)},
                       {"center_ds", to_json3(e.center_ds)}});
  json warnings = json::array();
  for (const auto& w : m.warnings) warnings.push_back({{"id", w.id}, {"message", w.message}});
  const json j = {{"target_dims", to_json3(m.options.target_dims)},
                  {"window", {m.options.window.lo, m.options.window.hi}},
                  {"sigma_vox", m.options.sigma_vox},
                  {"samples", entries},
                  {"warnings", warnings}};
  return j.dump(2) + "\n";
}

Manifest parse_manifest(std::string_view text) {
  try {
    const json j = json::parse(text);
    Manifest m;
    m.options.target_dims = dims3_from(j.at("target_dims"));
    m.options.window = {j.at("window").at(0).get<double>(), j.at("window").at(1).get<double>()};
    m.options.sigma_vox = j.at("sigma_vox").get<double>();
    for (const auto& e : j.at("samples")) {
      const auto sp = vec3_from(e.at("full_spacing_mm"));
      m.entries.push_back({e.at("id").get<std::string>(), e.at("input_file").get<std::string>(),
                           dims3_from(e.at("full_dims")), sp.array(), vec3_from(e.at("center_full")),
                           vec3_from(e.at("center_ds"))});
    }
    for (const auto& w : j.at("warnings"))
      m.warnings.push_back({w.at("id").get<std::string>(), w.at("message").get<std::string>()});
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
}

Manifest read_manifest(const fs::path& data_dir) {
  const auto path = data_dir / kManifestName;
  const auto bytes = byte_io::read_file(path);
  return parse_manifest(std::string_view(bytes.data(), bytes.size()));
}

Manifest preprocess_dataset(const fs::path& raw_dir, const fs::path& out_dir,
                            const PreprocessOptions& options) {
  if (!fs::is_directory(raw_dir)) throw DataError("raw directory not found: " + raw_dir.string());
  if (!(options.window.lo < options.window.hi)) throw UsageError("HU window needs lo < hi");
  if ((options.target_dims < 1).any()) throw UsageError("target_dims must be >= 1");

  std::set<std::string> images, masks;
  for (const auto& entry : fs::directory_iterator(raw_dir)) {
    const std::string name = entry.path().filename().string();
    if (ends_with(name, kImageSuffix)) images.insert(name.substr(0, name.size() - kImageSuffix.size()));
    if (ends_with(name, kMaskSuffix)) masks.insert(name.substr(0, name.size() - kMaskSuffix.size()));
  }
  for (const auto& id : images)
    if (!masks.count(id))
      throw DataError("missing mask for '" + id + "': " +
                      (raw_dir / (id + std::string(kMaskSuffix))).string());
  for (const auto& id : masks)
    if (!images.count(id))
      throw DataError("missing image for '" + id + "': " +
                      (raw_dir / (id + std::string(kImageSuffix))).string());

  fs::create_directories(out_dir);
  Manifest manifest;
  manifest.options = options;
  const auto ds_frame = FrameTag::downsampled(options.target_dims);
  for (const auto& id : images) {
    const auto image = read_image(raw_dir / (id + std::string(kImageSuffix)));
    const auto mask = read_mask(raw_dir / (id + std::string(kMaskSuffix)));
    if (!same_dims(image.dims, mask.dims))
      throw DataError("image and mask dims differ for '" + id + "': " + to_string(image.dims) +
                      " vs " + to_string(mask.dims));
    Point3 com;
    try {
      com = mask_center_of_mass(mask);
    } catch (const EmptyMaskError&) {
      manifest.warnings.push_back({id, "empty mask; sample skipped"});
      log_warn("sample '" + id + "' has an empty mask and was skipped");
      continue;
    }
    const auto ds = resample_trilinear(normalize_hu(image, options.window.lo, options.window.hi),
                                       options.target_dims);
    const std::string file = id + "_ds.gvol";
    write_gvol(ds, out_dir / file);
    manifest.entries.push_back({id, file, image.dims, image.spacing_mm, com.coords,
                                rescale_point(com, ds_frame).coords});
  }
  byte_io::write_text(out_dir / kManifestName, manifest_json(manifest));
  log_info("preprocessed " + std::to_string(manifest.entries.size()) + " samples into " +
           out_dir.string());
  return manifest;
}

std::vector<TrainingSample> load_samples(const fs::path& data_dir) {
  const Manifest m = read_manifest(data_dir);
  const auto ds_frame = FrameTag::downsampled(m.options.target_dims);
  std::vector<TrainingSample> samples;
  for (const auto& e : m.entries) {
    TrainingSample s;
    s.source_id = e.id;
    s.input = read_image(data_dir / e.input_file);
    if (!same_dims(s.input.dims, m.options.target_dims))
      throw DataError("sample '" + e.id + "' has dims " + to_string(s.input.dims) +
                      ", manifest says " + to_string(m.options.target_dims));
    s.center_ds = {e.center_ds, ds_frame};
    s.center_full = {e.center_full, FrameTag::full_res(e.full_dims)};
    if (!s.center_ds.inside_grid())
      throw DataError("sample '" + e.id + "' has a centre outside the downsampled grid");
    s.full_dims = e.full_dims;
    s.full_spacing_mm = e.full_spacing_mm;
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---- cross-validation and training ---------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw UsageError("lr must be > 0");
  if (w2 < 0.0 || w1 < 0.0 || (w2 == 0.0 && w1 == 0.0))
    throw UsageError("loss weights must be >= 0 and not both 0");
  if (!(sigma_vox > 0.0)) throw UsageError("sigma_vox must be > 0");
  if ((shift_max_vox < 0).any()) throw UsageError("shift_max_vox must be >= 0");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw UsageError("flip_prob must lie in [0, 1]");
  if (folds < 2) throw UsageError("folds must be >= 2");
}

std::vector<std::string> FoldSplit::training(int fold) const {
  if (fold < 0 || fold >= k()) throw UsageError("fold index out of range");
  std::vector<std::string> ids;
  for (int f = 0; f < k(); ++f)
    if (f != fold) ids.insert(ids.end(), validation[f].begin(), validation[f].end());
  return ids;
}

FoldSplit make_folds(std::vector<std::string> ids, int k, std::uint64_t seed) {
  if (k < 2) throw UsageError("folds must be >= 2");
  if (static_cast<int>(ids.size()) < k)
    throw DataError("need at least " + std::to_string(k) + " samples for " + std::to_string(k) +
                    " folds, have " + std::to_string(ids.size()));
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw UsageError("sample ids must be unique");
  ad::Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  FoldSplit split;
  split.validation.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < ids.size(); ++i) split.validation[i % k].push_back(ids[i]);
  return split;
}

std::string fold_split_json(const FoldSplit& split) {
  json folds = json::array();
  for (const auto& v : split.validation) folds.push_back(v);
  return json{{"validation", folds}}.dump(2) + "\n";
}

FoldSplit parse_fold_split(std::string_view text) {
  try {
    const json j = json::parse(text);
    FoldSplit split;
    for (const auto& v : j.at("validation"))
      split.validation.push_back(v.get<std::vector<std::string>>());
    return split;
  } catch (const json::exception& e) {
    throw DataError(std::string("fold split: ") + e.what());
  }
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ (b * 0xD1B54A32D192ED03ull));
}

ImageVolume shift_volume(const ImageVolume& vol, const Eigen::Array3i& delta, float pad) {
  ImageVolume out(vol.dims, vol.spacing_mm, pad);
  for (int z = 0; z < vol.dims(0); ++z) {
    const int sz = z - delta(0);
    if (sz < 0 || sz >= vol.dims(0)) continue;
    for (int y = 0; y < vol.dims(1); ++y) {
      const int sy = y - delta(1);
      if (sy < 0 || sy >= vol.dims(1)) continue;
      for (int x = 0; x < vol.dims(2); ++x) {
        const int sx = x - delta(2);
        if (sx >= 0 && sx < vol.dims(2)) out(z, y, x) = vol(sz, sy, sx);
      }
    }
  }
  return out;
}

AugmentedSample augment_sample(const TrainingSample& s, const TrainConfig& config, ad::Rng& rng) {
  const Dims3& dims = s.input.dims;
  AugmentedSample out;
  for (int a = 0; a < 3; ++a) {
    std::uniform_int_distribution<int> draw(-config.shift_max_vox(a), config.shift_max_vox(a));
    const int lo = static_cast<int>(std::ceil(-s.center_ds.coords(a)));
    const int hi = static_cast<int>(std::floor(dims(a) - 1 - s.center_ds.coords(a)));
    out.shift(a) = std::clamp(draw(rng), lo, hi);
  }
  out.flipped = std::bernoulli_distribution(config.flip_prob)(rng);

  out.input = out.shift.isZero() ? s.input : shift_volume(s.input, out.shift, s.input.data.minCoeff());
  out.center = s.center_ds;
  out.center.coords += out.shift.cast<double>().matrix();
  if (out.flipped) {
    out.input = flip_lr(out.input);
    out.center = flip_lr_point(out.center);
  }
  out.target = generate_heatmap<float>(dims, out.center, {config.sigma_vox}, s.input.spacing_mm);
  return out;
}

std::string history_json(const TrainHistory& h) {
  return json{{"train_loss", h.train_loss},
              {"val_loss", h.val_loss},
              {"best_epoch", h.best_epoch},
              {"best_val_loss", h.best_val_loss}}
             .dump(2) +
         "\n";
}

namespace {

using ad::Tensor;

float batch_loss(const Tensor<float>& pred, const Tensor<float>& target, const TrainConfig& c,
                 Tensor<float>* keep) {
  auto loss = ad::weighted_l2_l1_loss(pred, target, static_cast<float>(c.w2),
                                      static_cast<float>(c.w1));
  if (keep) *keep = loss;
  return loss.item();
}

}  // namespace

double evaluate_loss(const LocatorModel<float>& model,
                     std::span<const TrainingSample* const> samples, const TrainConfig& config) {
  if (samples.empty()) throw DataError("evaluate_loss: no samples");
  ad::Rng unused(0);
  double total = 0.0;
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (std::size_t start = 0; start < samples.size(); start += bs) {
    std::vector<ImageVolume> inputs, targets;
    for (std::size_t i = start; i < std::min(start + bs, samples.size()); ++i) {
      inputs.push_back(samples[i]->input);
      targets.push_back(generate_heatmap<float>(samples[i]->input.dims, samples[i]->center_ds,
                                                {config.sigma_vox}, samples[i]->input.spacing_mm));
    }
    const auto pred = forward(model, volumes_to_tensor<float>(inputs), ad::Mode::Eval, unused);
    total += static_cast<double>(batch_loss(pred, volumes_to_tensor<float>(targets), config, nullptr)) *
             static_cast<double>(inputs.size());
  }
  return total / static_cast<double>(samples.size());
}

FoldTrainResult train_fold(const std::vector<TrainingSample>& samples, const FoldSplit& split,
                           int fold, const LocatorConfig& model_config,
                           const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  model_config.validate();
  if (fold < 0 || fold >= split.k())
    throw UsageError("fold " + std::to_string(fold) + " out of range for " +
                     std::to_string(split.k()) + " folds");

  std::unordered_map<std::string, const TrainingSample*> by_id;
  for (const auto& s : samples) {
    if (!same_dims(s.input.dims, model_config.in_dims))
      throw ShapeError("sample '" + s.source_id + "' has dims " + to_string(s.input.dims) +
                       " but the model expects " + to_string(model_config.in_dims));
    by_id.emplace(s.source_id, &s);
  }
  auto lookup = [&](const std::vector<std::string>& ids) {
    std::vector<const TrainingSample*> out;
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("fold split names unknown sample '" + id + "'");
      out.push_back(it->second);
    }
    return out;
  };
  const auto train = lookup(split.training(fold));
  const auto val = lookup(split.validation[static_cast<std::size_t>(fold)]);
  if (train.empty() || val.empty()) throw DataError("fold " + std::to_string(fold) + " is empty");

  FoldTrainResult result;
  auto model = build_locator<float>(model_config, derive_seed(config.seed, fold, 0));
  ad::Rng rng(derive_seed(config.seed, fold, 1));
  ad::AdamState<float> adam(model.params, ad::AdamOptions{config.lr});
  result.best = model.clone();

  std::vector<std::size_t> order(train.size());
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    double train_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<ImageVolume> inputs, targets;
      for (std::size_t i = start; i < std::min(start + bs, order.size()); ++i) {
        auto aug = augment_sample(*train[order[i]], config, rng);
        inputs.push_back(std::move(aug.input));
        targets.push_back(std::move(aug.target));
      }
      for (auto& p : model.params) p.zero_grad();
      Tensor<float> loss;
      const auto pred = forward(model, volumes_to_tensor<float>(inputs), ad::Mode::Train, rng);
      const float value = batch_loss(pred, volumes_to_tensor<float>(targets), config, &loss);
      if (!std::isfinite(value))
        throw DivergenceError("fold " + std::to_string(fold) + " epoch " + std::to_string(epoch) +
                              ": non-finite training loss (try a lower lr)");
      loss.backward();
      ad::adam_step(model.params, adam);
      train_total += static_cast<double>(value) * static_cast<double>(inputs.size());
    }
    const double train_loss = train_total / static_cast<double>(order.size());
    const double val_loss = evaluate_loss(model, val, config);
    if (!std::isfinite(val_loss))
      throw DivergenceError("fold " + std::to_string(fold) + " epoch " + std::to_string(epoch) +
                            ": non-finite validation loss");
    result.history.train_loss.push_back(train_loss);
    result.history.val_loss.push_back(val_loss);
    if (val_loss < result.history.best_val_loss) {
      result.history.best_val_loss = val_loss;
      result.history.best_epoch = epoch;
      result.best = model.clone();
    }
    if (on_epoch) on_epoch(epoch, train_loss, val_loss);
  }
  return result;
}

// ---- per-fold testing -----------------------------------------------------

TestReport test_folds(const std::vector<TrainingSample>& samples, const FoldSplit& split,
                      const std::vector<HeatmapPredictor>& predictors, Extraction method,
                      double tau) {
  for (int f = 0; f < split.k(); ++f)
    if (static_cast<std::size_t>(f) >= predictors.size() || !predictors[f])
      throw DataError("missing checkpoint for fold " + std::to_string(f));
  std::unordered_map<std::string, const TrainingSample*> by_id;
  for (const auto& s : samples) by_id.emplace(s.source_id, &s);

  TestReport report;
  report.method = method;
  std::vector<double> pooled;
  for (int f = 0; f < split.k(); ++f) {
    std::vector<double> dists;
    for (const auto& id : split.validation[static_cast<std::size_t>(f)]) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("fold split names unknown sample '" + id + "'");
      const TrainingSample& s = *it->second;
      const auto h = predictors[f](s.input);
      const auto r = localise_heatmap(h, FrameTag::full_res(s.full_dims), s.full_spacing_mm,
                                      method, tau, id);
      SampleError e;
      e.id = id;
      e.fold = f;
      e.method = method;
      e.pred_full = r.point_full;
      e.delta_mm = ((r.point_full.coords - s.center_full.coords).array() * s.full_spacing_mm).matrix();
      e.dist_mm = euclidean_distance_mm(r.point_full, s.center_full, s.full_spacing_mm);
      dists.push_back(e.dist_mm);
      report.samples.push_back(std::move(e));
    }
    pooled.insert(pooled.end(), dists.begin(), dists.end());
    report.folds.push_back({f, summarize(std::move(dists))});
  }
  report.pooled = summarize(std::move(pooled));
  for (const auto& fr : report.folds) report.ranking.push_back(fr.fold);
  std::stable_sort(report.ranking.begin(), report.ranking.end(), [&](int a, int b) {
    return report.folds[a].summary.median_mm < report.folds[b].summary.median_mm;
  });
  return report;
}

std::string test_report_json(const TestReport& report) {
  json folds = json::array();
  for (const auto& f : report.folds) {
    json j = summary_json(f.summary);
    j["fold"] = f.fold;
    folds.push_back(j);
  }
  return json{{"method", to_string(report.method)},
              {"folds", folds},
              {"pooled", summary_json(report.pooled)},
              {"ranking", report.ranking}}
             .dump(2) +
         "\n";
}

std::string test_report_csv(const TestReport& report) {
  std::ostringstream out;
  out << "id,fold,method,dz,dy,dx,dist_mm\n";
  for (const auto& s : report.samples)
    out << s.id << ',' << s.fold << ',' << to_string(s.method) << ',' << format_double(s.delta_mm(0))
        << ',' << format_double(s.delta_mm(1)) << ',' << format_double(s.delta_mm(2)) << ','
        << format_double(s.dist_mm) << '\n';
  return out.str();
}

}  // namespace gaaf
