#include <set>
#include <sstream>

#include "doctest.h"
#include "gaaf/byte_io.hpp"
#include "gaaf/cli.hpp"
#include "gaaf/run_config.hpp"
#include "gaaf/synth.hpp"
#include "test_support.hpp"

using namespace gaaf;
using nlohmann::json;

namespace {

PhantomSpec tiny_spec() {
  PhantomSpec s;
  s.full_dims = Dims3(12, 16, 14);
  s.n_samples = 4;
  s.semi_axis_min_vox = 2;
  s.semi_axis_max_vox = 4;
  s.margin_vox = 1;
  s.seed = 7;
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  const auto b = byte_io::read_file(p);
  return std::string(b.begin(), b.end());
}

struct Run {
  int code;
  std::string out, err;
};

Run gaaf_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  args.push_back("-q");
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("synth_generate") {
  testing::ScratchDir a("synth_a"), b("synth_b");
  const auto spec = tiny_spec();
  const auto m = synth_generate(spec, a.path());
  REQUIRE(m.samples.size() == 4);

  for (const auto& rec : m.samples) {
    const auto mask = read_mask(a / (rec.id + "_mask.gvol"));
    const auto com = mask_center_of_mass(mask);
    CHECK((com.coords - rec.center).cwiseAbs().maxCoeff() <= 0.5);
    CHECK(mask.data.cast<std::int64_t>().sum() == rec.mask_voxels);
    for (int ax = 0; ax < 3; ++ax) {
      CHECK(rec.center(ax) - rec.semi_axes(ax) >= spec.margin_vox);
      CHECK(rec.center(ax) + rec.semi_axes(ax) <= spec.full_dims(ax) - 1 - spec.margin_vox);
    }
  }

  synth_generate(spec, b.path());
  for (const auto& rec : m.samples) {
    CHECK(slurp(a / (rec.id + "_img.gvol")) == slurp(b / (rec.id + "_img.gvol")));
    CHECK(slurp(a / (rec.id + "_mask.gvol")) == slurp(b / (rec.id + "_mask.gvol")));
  }
  const auto text = slurp(a / "phantoms.json");
  CHECK(text == slurp(b / "phantoms.json"));
  CHECK(phantom_manifest_json(parse_phantom_manifest(text)) == text);
}

TEST_CASE("noise-free unit-contrast phantoms are mask indicators") {
  testing::ScratchDir dir("synth_ind");
  auto spec = tiny_spec();
  spec.noise_std = 0.0;
  spec.contrast = 1.0;
  spec.n_samples = 2;
  const auto m = synth_generate(spec, dir.path());
  for (const auto& rec : m.samples) {
    const auto img = read_image(dir / (rec.id + "_img.gvol"));
    const auto mask = read_mask(dir / (rec.id + "_mask.gvol"));
    CHECK((img.data == mask.data.cast<float>()).all());
  }
}

TEST_CASE("phantom spec margins") {
  auto spec = tiny_spec();
  CHECK_NOTHROW(spec.validate());
  spec.margin_vox = 4;  // 4 + 4 > (12 - 1) / 2
  CHECK_THROWS_AS(spec.validate(), UsageError);
  spec = tiny_spec();
  spec.semi_axis_min_vox = 5;
  CHECK_THROWS_AS(spec.validate(), UsageError);
  testing::ScratchDir dir("synth_bad");
  spec.margin_vox = 100;
  CHECK_THROWS_AS(synth_generate(spec, dir.path()), UsageError);
}

TEST_CASE("every config key is documented and has a default") {
  const json defaults = to_json(RunConfig{});
  std::set<std::string> documented;
  for (const auto& k : config_keys()) {
    CHECK_FALSE(k.help.empty());
    documented.insert(k.name);
  }
  std::set<std::string> present;
  for (const auto& [key, value] : defaults.items()) present.insert(key);
  CHECK(documented == present);
  CHECK(to_json(run_config_from_json(defaults)) == defaults);
}

TEST_CASE("config precedence: default < file < flag, per field") {
  struct Case {
    std::string key;
    json file, flag, flag_normalised;
  };
  const std::vector<Case> cases = {
      {"in", "a", "b", "b"},
      {"out", "a", "b", "b"},
      {"checkpoint", "a", "b", "b"},
      {"results", "a", "b", "b"},
      {"seed", 5, 6, 6},
      {"n_samples", 3, 4, 4},
      {"full_dims", {8, 8, 8}, "9x10x11", {9, 10, 11}},
      {"spacing_mm", {2.0, 2.0, 2.0}, {3.0, 1.0, 0.5}, {3.0, 1.0, 0.5}},
      {"semi_axis_min_vox", 2.0, 3.0, 3.0},
      {"semi_axis_max_vox", 7.0, 8.0, 8.0},
      {"margin_vox", 3, 4, 4},
      {"contrast", 10.0, 20.0, 20.0},
      {"noise_std", 1.0, 2.0, 2.0},
      {"target_dims", {8, 8, 8}, "4x8x16", {4, 8, 16}},
      {"window_lo", -500.0, -200.0, -200.0},
      {"window_hi", 500.0, 200.0, 200.0},
      {"sigma_vox", 2.0, 1.5, 1.5},
      {"levels", 2, 4, 4},
      {"base_channels", 4, 16, 16},
      {"attention", false, "on", true},
      {"dropout", 0.2, 0.3, 0.3},
      {"epochs", 10, 20, 20},
      {"batch_size", 3, 4, 4},
      {"lr", 0.01, 0.02, 0.02},
      {"w2", 2.0, 3.0, 3.0},
      {"w1", 0.5, 0.25, 0.25},
      {"shift_max_vox", {1, 1, 1}, "2x0x3", {2, 0, 3}},
      {"flip_prob", 0.25, 0.75, 0.75},
      {"folds", 3, 4, 4},
      {"fold", 1, 2, 2},
      {"method", "argmax", "fit", "fit"},
      {"tau", 0.4, 0.3, 0.3},
      {"crop_dims", {4, 4, 4}, "5x6x7", {5, 6, 7}},
  };
  CHECK(cases.size() == config_keys().size());
  testing::ScratchDir dir("cfg");
  const json defaults = to_json(RunConfig{});
  for (const auto& c : cases) {
    CAPTURE(c.key);
    CHECK(to_json(resolve_config({}, {}))[c.key] == defaults[c.key]);
    byte_io::write_text(dir / "c.json", json{{c.key, c.file}}.dump());
    const json from_file = to_json(resolve_config(dir / "c.json", {}))[c.key];
    CHECK(from_file == c.file);
    CHECK(from_file != defaults[c.key]);
    CHECK(to_json(resolve_config(dir / "c.json", {{c.key, c.flag}}))[c.key] == c.flag_normalised);
  }
}

TEST_CASE("config errors") {
  testing::ScratchDir dir("cfg_err");
  byte_io::write_text(dir / "typo.json", R"({"epoch": 3})");
  CHECK_THROWS_AS(resolve_config(dir / "typo.json", {}), UsageError);
  byte_io::write_text(dir / "bad.json", R"({"epochs": )");
  CHECK_THROWS_AS(resolve_config(dir / "bad.json", {}), UsageError);
  byte_io::write_text(dir / "array.json", "[1]");
  CHECK_THROWS_AS(resolve_config(dir / "array.json", {}), UsageError);
  CHECK_THROWS_AS(resolve_config({}, {{"epochs", "many"}}), UsageError);
  CHECK_THROWS_AS(resolve_config({}, {{"epochs", 2.5}}), UsageError);
  CHECK_THROWS_AS(resolve_config({}, {{"seed", -1}}), UsageError);
  CHECK_THROWS_AS(resolve_config({}, {{"attention", "maybe"}}), UsageError);
  CHECK_THROWS_AS(resolve_config({}, {{"method", "mean"}}), UsageError);
  CHECK_THROWS_AS(resolve_config({}, {{"crop_dims", "0x4x4"}}), UsageError);
  CHECK_THROWS_AS(resolve_config(dir / "missing.json", {}), DataError);

  CHECK((parse_dims("3x4x5") == Dims3(3, 4, 5)).all());
  for (const char* bad : {"3x4", "3x4x5x6", "3,4,5", "axbxc", "3x4x5 ", ""})
    CHECK_THROWS_AS(parse_dims(bad), UsageError);
  CHECK(parse_override_value("12") == json(12));
  CHECK(parse_override_value("[1,2]") == json({1, 2}));
  CHECK(parse_override_value("on") == json("on"));
  CHECK(parse_override_value("16x32x32") == json("16x32x32"));
}

TEST_CASE("cli usage and exit codes") {
  CHECK(gaaf_run({"--help"}).code == cli::kOk);
  for (const char* sub : {"synth", "preprocess", "train", "test", "infer", "eval", "gradcheck"}) {
    const auto r = gaaf_run({sub, "--help"});
    CAPTURE(sub);
    CHECK(r.code == cli::kOk);
    CHECK(r.out.find("Usage") != std::string::npos);
  }
  CHECK(gaaf_run({}).code == cli::kUsage);
  CHECK(gaaf_run({"frobnicate"}).code == cli::kUsage);
  CHECK(gaaf_run({"synth", "--bogus"}).code == cli::kUsage);
  CHECK(gaaf_run({"synth"}).code == cli::kUsage);
  CHECK(gaaf_run({"synth", "--out", "x", "--set", "nope=1"}).code == cli::kUsage);
  CHECK(gaaf_run({"infer", "--in", "x", "--out", "y", "--checkpoint", "z", "--method", "median"})
            .code == cli::kUsage);

  const auto missing = gaaf_run({"preprocess", "--in", "/no/such/dir", "--out", "/tmp/unused"});
  CHECK(missing.code == cli::kData);
  CHECK(missing.err.find("/no/such/dir") != std::string::npos);
}

TEST_CASE("cli pipeline is idempotent and maps numerical failures to exit 3") {
  testing::ScratchDir dir("cli");
  const auto cfg = dir / "cfg.json";
  byte_io::write_text(cfg, R"({"n_samples": 4, "full_dims": [16, 24, 24], "semi_axis_min_vox": 2,
    "semi_axis_max_vox": 4, "margin_vox": 2, "target_dims": "4x8x8", "levels": 2,
    "base_channels": 2, "epochs": 2, "folds": 2, "shift_max_vox": "1x1x1", "seed": 1})");
  auto pipeline = [&](const std::string& tag) {
    const std::string root = (dir / tag).string();
    REQUIRE(gaaf_run({"synth", "--config", cfg.string(), "--seed", "3", "--out", root + "/raw"}).code == 0);
    REQUIRE(gaaf_run({"preprocess", "--config", cfg.string(), "--in", root + "/raw", "--out", root + "/ds"}).code == 0);
    REQUIRE(gaaf_run({"train", "--config", cfg.string(), "--in", root + "/ds", "--out", root + "/run"}).code == 0);
    REQUIRE(gaaf_run({"test", "--config", cfg.string(), "--in", root + "/ds", "--checkpoint", root + "/run"}).code == 0);
    REQUIRE(gaaf_run({"infer", "--config", cfg.string(), "--in", root + "/raw", "--checkpoint",
                      root + "/run/fold_0.gckp", "--out", root + "/inf", "--crop", "8x8x8"}).code == 0);
    REQUIRE(gaaf_run({"eval", "--in", root + "/raw", "--results", root + "/inf/results.csv", "--out",
                      root + "/eval"}).code == 0);
  };
  pipeline("a");
  pipeline("b");
  CHECK(parse_phantom_manifest(slurp(dir / "a/raw/phantoms.json")).spec.seed == 3);
  for (const char* f : {"raw/phantoms.json", "raw/phantom_002_img.gvol", "ds/manifest.json",
                        "ds/phantom_001_ds.gvol", "run/folds.json", "run/fold_0.gckp",
                        "run/fold_1.gckp", "run/fold_1_history.json", "run/run_config.json",
                        "run/test_gaussian_fit.json", "run/test_gaussian_fit.csv",
                        "inf/results.csv", "inf/phantom_000_crop.gvol", "inf/phantom_000_crop.json",
                        "eval/eval_results.csv", "eval/eval_summary.json"}) {
    CAPTURE(f);
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }

  const auto a = (dir / "a").string();
  std::filesystem::remove(dir / "a/run/fold_1.gckp");
  const auto r = gaaf_run({"test", "--in", a + "/ds", "--checkpoint", a + "/run"});
  CHECK(r.code == cli::kData);
  CHECK(r.err.find("fold_1.gckp") != std::string::npos);

  CHECK(gaaf_run({"train", "--config", cfg.string(), "--in", a + "/ds", "--out", a + "/run2",
                  "--set", "lr=1e30"}).code == cli::kNumerical);
  CHECK(gaaf_run({"infer", "--in", a + "/raw", "--checkpoint", a + "/run/fold_0.gckp", "--out",
                  a + "/inf2", "--set", "method=argmax"}).code == cli::kOk);
}
