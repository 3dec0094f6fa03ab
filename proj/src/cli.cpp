#include "gaaf/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "gaaf/byte_io.hpp"
#include "gaaf/gradcheck_suite.hpp"
#include "gaaf/log.hpp"
#include "gaaf/run_config.hpp"

namespace gaaf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Flags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> in, out, checkpoint, results, method, attention, crop;
  std::optional<int> folds, fold;
  bool quiet = false;
};

std::vector<std::pair<std::string, json>> overrides_from(const Flags& f) {
  std::vector<std::pair<std::string, json>> o;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    o.emplace_back(s.substr(0, eq), parse_override_value(std::string_view(s).substr(eq + 1)));
  }
  if (f.seed) o.emplace_back("seed", *f.seed);
  if (f.in) o.emplace_back("in", *f.in);
  if (f.out) o.emplace_back("out", *f.out);
  if (f.checkpoint) o.emplace_back("checkpoint", *f.checkpoint);
  if (f.results) o.emplace_back("results", *f.results);
  if (f.method) o.emplace_back("method", *f.method);
  if (f.attention) o.emplace_back("attention", *f.attention);
  if (f.crop) o.emplace_back("crop_dims", *f.crop);
  if (f.folds) o.emplace_back("folds", *f.folds);
  if (f.fold) o.emplace_back("fold", *f.fold);
  return o;
}

fs::path require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing ") + flag);
  return value;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

json summary_json(const EvalSummary& s) {
  return {{"n", s.n},           {"median_mm", s.median_mm}, {"mean_mm", s.mean_mm},
          {"std_mm", s.std_mm}, {"iqr_mm", s.iqr_mm}};
}

void print_summary(std::ostream& out, const std::string& label, const EvalSummary& s) {
  out << label << ": n=" << s.n << " median " << fmt(s.median_mm) << " mm, mean "
      << fmt(s.mean_mm) << " mm, std " << fmt(s.std_mm) << " mm, iqr " << fmt(s.iqr_mm)
      << " mm\n";
}

int cmd_synth(const RunConfig& c, std::ostream& out) {
  const auto dir = require(c.out, "--out");
  const auto m = synth_generate(c.phantom, dir);
  out << "wrote " << m.samples.size() << " phantoms to " << dir.string() << "\n";
  return kOk;
}

int cmd_preprocess(const RunConfig& c, std::ostream& out) {
  const auto m = preprocess_dataset(require(c.in, "--in"), require(c.out, "--out"), c.preprocess);
  out << "preprocessed " << m.entries.size() << " samples";
  if (!m.warnings.empty()) out << " (" << m.warnings.size() << " skipped)";
  out << "\n";
  return kOk;
}

std::string fold_file(int fold, const char* suffix) {
  return "fold_" + std::to_string(fold) + suffix;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  const auto data = require(c.in, "--in");
  const auto run_dir = require(c.out, "--out");
  const Manifest manifest = read_manifest(data);
  const auto samples = load_samples(data);
  LocatorConfig model = c.model;
  if (!same_dims(model.in_dims, manifest.options.target_dims))
    log_info("model input dims taken from the dataset: " + to_string(manifest.options.target_dims));
  model.in_dims = manifest.options.target_dims;
  model.validate();
  c.train.validate();
  if (c.fold >= c.train.folds) throw UsageError("--fold must be below --folds");

  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.source_id);
  const FoldSplit split = make_folds(ids, c.train.folds, c.seed);

  fs::create_directories(run_dir);
  json saved = to_json(c);
  for (const char* key : {"in", "out", "checkpoint", "results"}) saved.erase(key);
  saved["target_dims"] = {model.in_dims(0), model.in_dims(1), model.in_dims(2)};
  byte_io::write_text(run_dir / "run_config.json", saved.dump(2) + "\n");
  byte_io::write_text(run_dir / "folds.json", fold_split_json(split));

  for (int f = 0; f < split.k(); ++f) {
    if (c.fold >= 0 && f != c.fold) continue;
    const auto r = train_fold(samples, split, f, model, c.train, [&](int epoch, double tl, double vl) {
      log_info("fold " + std::to_string(f) + " epoch " + std::to_string(epoch + 1) + "/" +
               std::to_string(c.train.epochs) + " train " + std::to_string(tl) + " val " +
               std::to_string(vl));
    });
    save_checkpoint(r.best, run_dir / fold_file(f, ".gckp"));
    byte_io::write_text(run_dir / fold_file(f, "_history.json"), history_json(r.history));
    out << "fold " << f << ": best epoch " << r.history.best_epoch + 1 << ", val loss "
        << r.history.best_val_loss << "\n";
  }
  return kOk;
}

int cmd_test(const RunConfig& c, std::ostream& out) {
  const auto data = require(c.in, "--in");
  const auto run_dir = require(c.checkpoint, "--checkpoint");
  const fs::path out_dir = c.out.empty() ? run_dir : fs::path(c.out);
  const auto samples = load_samples(data);
  const auto split_bytes = byte_io::read_file(run_dir / "folds.json");
  const FoldSplit split = parse_fold_split(std::string_view(split_bytes.data(), split_bytes.size()));

  std::vector<HeatmapPredictor> predictors;
  for (int f = 0; f < split.k(); ++f) {
    const auto path = run_dir / fold_file(f, ".gckp");
    if (!fs::exists(path)) throw DataError("missing checkpoint for fold " + std::to_string(f) + ": " + path.string());
    predictors.push_back(model_predictor(load_checkpoint(path)));
  }
  const auto report = test_folds(samples, split, predictors, c.method, c.tau);
  fs::create_directories(out_dir);
  const std::string stem = "test_" + to_string(c.method);
  byte_io::write_text(out_dir / (stem + ".json"), test_report_json(report));
  byte_io::write_text(out_dir / (stem + ".csv"), test_report_csv(report));
  for (const auto& f : report.folds) print_summary(out, "fold " + std::to_string(f.fold), f.summary);
  print_summary(out, "pooled", report.pooled);
  return kOk;
}

std::vector<std::pair<std::string, fs::path>> gather_volumes(const fs::path& in) {
  auto id_of = [](const fs::path& p) {
    std::string stem = p.stem().string();
    if (stem.size() > 4 && stem.ends_with("_img")) stem.resize(stem.size() - 4);
    return stem;
  };
  std::vector<std::pair<std::string, fs::path>> found;
  if (fs::is_regular_file(in)) {
    found.emplace_back(id_of(in), in);
  } else if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in)) {
      const std::string name = e.path().filename().string();
      if (e.path().extension() != ".gvol" || name.ends_with("_mask.gvol") ||
          name.ends_with("_crop.gvol"))
        continue;
      found.emplace_back(id_of(e.path()), e.path());
    }
    std::sort(found.begin(), found.end());
  } else {
    throw DataError("input not found: " + in.string());
  }
  if (found.empty()) throw DataError("no .gvol volumes in " + in.string());
  return found;
}

int cmd_infer(const RunConfig& c, std::ostream& out) {
  const auto inputs = gather_volumes(require(c.in, "--in"));
  const auto out_dir = require(c.out, "--out");
  const auto model = load_checkpoint(require(c.checkpoint, "--checkpoint"));
  const LocateOptions opts{model.config.in_dims, c.preprocess.window, c.method, c.tau};
  const auto predictor = model_predictor(model);

  fs::create_directories(out_dir);
  std::vector<ResultRow> rows;
  for (const auto& [id, path] : inputs) {
    const auto volume = read_image(path);
    LocalisationResult r;
    if (c.cropping()) {
      const auto crop = locate_and_crop(predictor, volume, opts, c.crop_dims,
                                        static_cast<float>(c.preprocess.window.lo), id);
      write_crop(crop, out_dir);
      r = crop.result;
    } else {
      r = locate(predictor, volume, opts, id);
    }
    rows.push_back({id, r.method, r.point_full.coords});
    out << id << ": " << fmt(r.point_full.coords(0)) << " " << fmt(r.point_full.coords(1)) << " "
        << fmt(r.point_full.coords(2)) << "\n";
  }
  byte_io::write_text(out_dir / "results.csv", results_csv(rows));
  return kOk;
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  const auto gold_dir = require(c.in, "--in");
  const auto out_dir = require(c.out, "--out");
  const auto bytes = byte_io::read_file(require(c.results, "--results"));
  auto rows = parse_results_csv(std::string_view(bytes.data(), bytes.size()));
  if (rows.empty()) throw DataError("no rows in " + c.results);

  std::vector<double> dists;
  for (auto& row : rows) {
    const auto mask = read_mask(gold_dir / (row.id + "_mask.gvol"));
    const auto gold = mask_center_of_mass(mask);
    const Point3 pred{row.point_full, gold.frame};
    if (!pred.inside_grid())
      throw DataError("'" + row.id + "' lies outside its " + to_string(mask.dims) + " grid");
    row.dist_mm = euclidean_distance_mm(pred, gold, mask.spacing_mm);
    dists.push_back(row.dist_mm);
  }
  const auto summary = summarize(dists);
  fs::create_directories(out_dir);
  byte_io::write_text(out_dir / "eval_results.csv", results_csv(rows));
  byte_io::write_text(out_dir / "eval_summary.json", summary_json(summary).dump(2) + "\n");
  print_summary(out, "evaluation", summary);
  return kOk;
}

int cmd_gradcheck(const RunConfig& c, std::ostream& out) {
  const auto cases = run_gradcheck_suite(c.seed == 0 ? 1 : c.seed);
  bool all = true;
  for (const auto& k : cases) {
    char line[160];
    std::snprintf(line, sizeof line, "%s  %-24s max rel %.2e over %zu entries\n",
                  k.report.passed ? "PASS" : "FAIL", k.name.c_str(), k.report.max_rel_error,
                  k.report.entries_checked);
    out << line;
    all = all && k.report.passed;
  }
  return all ? kOk : kNumerical;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Heatmap-based 3D landmark localisation.", "gaaf"};
  app.require_subcommand(1);
  Flags flags;

  using Command = int (*)(const RunConfig&, std::ostream&);
  std::vector<std::pair<CLI::App*, Command>> commands;
  auto add = [&](const char* name, const char* help, Command cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "JSON config file");
    sub->add_option("--set", flags.sets, "override a config key, key=value (repeatable)");
    sub->add_option("--seed", flags.seed, "base seed");
    sub->add_flag("-q,--quiet", flags.quiet, "only print warnings");
    commands.emplace_back(sub, cmd);
    return sub;
  };

  auto* synth = add("synth", "generate ellipsoid phantoms", cmd_synth);
  synth->add_option("--out", flags.out, "output directory");

  auto* pre = add("preprocess", "normalise, downsample and record target centres", cmd_preprocess);
  pre->add_option("--in", flags.in, "directory of <id>_img.gvol / <id>_mask.gvol pairs");
  pre->add_option("--out", flags.out, "dataset directory");

  auto* train = add("train", "k-fold training", cmd_train);
  train->add_option("--in", flags.in, "preprocessed dataset directory");
  train->add_option("--out", flags.out, "run directory for checkpoints and histories");
  train->add_option("--folds", flags.folds, "number of folds");
  train->add_option("--fold", flags.fold, "train only this fold");
  train->add_option("--attention", flags.attention, "on|off");

  auto* test = add("test", "evaluate each fold's checkpoint on its validation fold", cmd_test);
  test->add_option("--in", flags.in, "preprocessed dataset directory");
  test->add_option("--checkpoint", flags.checkpoint, "run directory written by train");
  test->add_option("--out", flags.out, "report directory (default: the run directory)");
  test->add_option("--method", flags.method, "argmax|fit");

  auto* infer = add("infer", "locate the target in full-resolution volumes", cmd_infer);
  infer->add_option("--in", flags.in, "a .gvol volume or a directory of them");
  infer->add_option("--checkpoint", flags.checkpoint, "model checkpoint (.gckp)");
  infer->add_option("--out", flags.out, "output directory");
  infer->add_option("--method", flags.method, "argmax|fit");
  infer->add_option("--crop", flags.crop, "crop ZxYxX around the located point");

  auto* eval = add("eval", "score infer results against mask centres", cmd_eval);
  eval->add_option("--results", flags.results, "results.csv from infer");
  eval->add_option("--in", flags.in, "directory holding <id>_mask.gvol");
  eval->add_option("--out", flags.out, "output directory");

  add("gradcheck", "finite-difference check of every differentiable op", cmd_gradcheck);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  set_log_level(flags.quiet ? LogLevel::Warn : LogLevel::Info);
  try {
    const RunConfig config = resolve_config(flags.config, overrides_from(flags));
    for (const auto& [sub, cmd] : commands)
      if (sub->parsed()) return cmd(config, out);
    return kUsage;
  } catch (const UsageError& e) {
    err << "gaaf: usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    err << "gaaf: numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "gaaf: error: " << e.what() << "\n";
    return kData;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace gaaf::cli
