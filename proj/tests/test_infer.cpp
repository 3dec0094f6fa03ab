#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "gaaf/byte_io.hpp"
#include "gaaf/infer.hpp"
#include "gaaf/synth.hpp"
#include "test_support.hpp"

using namespace gaaf;

namespace {

/// Predictor that ignores its input and returns a Gaussian at *centre.
HeatmapPredictor echo(const Point3* centre, double sigma = 2.0) {
  return [centre, sigma](const ImageVolume& input) {
    return generate_heatmap<float>(input.dims, *centre, {sigma}, input.spacing_mm);
  };
}

ImageVolume index_volume(const Dims3& dims, const Spacing3& spacing) {
  ImageVolume v(dims, spacing);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data(i) = static_cast<float>(i);
  return v;
}

}  // namespace

TEST_CASE("echo oracle stays within the quantisation bound") {
  testing::ScratchDir dir("echo");
  PhantomSpec spec;
  spec.full_dims = Dims3(24, 48, 40);
  spec.spacing_mm = Spacing3(2.5, 0.8, 1.1);
  spec.n_samples = 6;
  spec.semi_axis_min_vox = 3;
  spec.semi_axis_max_vox = 6;
  spec.margin_vox = 2;
  spec.seed = 4;
  const auto m = synth_generate(spec, dir.path());

  const Dims3 target(6, 12, 10);
  const Eigen::Array3d ratio = spec.full_dims.cast<double>() / target.cast<double>();
  Point3 gold_ds;
  for (const auto method : {Extraction::Argmax, Extraction::GaussianFit}) {
    CAPTURE(to_string(method));
    LocateOptions opts{target, {}, method, 0.5};
    for (const auto& rec : m.samples) {
      const auto img = read_image(dir / (rec.id + "_img.gvol"));
      const auto gold = mask_center_of_mass(read_mask(dir / (rec.id + "_mask.gvol")));
      gold_ds = rescale_point(gold, FrameTag::downsampled(target));
      const auto r = locate(echo(&gold_ds), img, opts, rec.id);
      const Eigen::Array3d err_mm = ((r.point_full.coords - gold.coords).array() * spec.spacing_mm).abs();
      const Eigen::Array3d bound_mm = 0.5 * ratio * spec.spacing_mm;
      CHECK((err_mm <= bound_mm + 1e-9).all());
      CHECK(r.source_id == rec.id);
      CHECK(r.point_full.frame == FrameTag::full_res(spec.full_dims));
    }
  }
}

TEST_CASE("an on-grid downsampled centre maps back exactly") {
  const Dims3 full(32, 64, 48), target(8, 16, 12);
  const auto vol = index_volume(full, Spacing3(2, 1, 1));
  const Point3 c{Eigen::Vector3d(3, 7, 5), FrameTag::downsampled(target)};
  const auto expected = rescale_point(c, FrameTag::full_res(full));
  for (const auto method : {Extraction::Argmax, Extraction::GaussianFit}) {
    const auto r = locate(echo(&c), vol, {target, {}, method, 0.5});
    CHECK((r.point_full.coords - expected.coords).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((r.point_mm - Eigen::Vector3d(2 * expected.coords(0), expected.coords(1), expected.coords(2)))
              .cwiseAbs()
              .maxCoeff() < 1e-6);
  }
}

TEST_CASE("argmax and gaussian fit agree within half a voxel on exact Gaussians") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Dims3 dims(16, 32, 32);
  for (int trial = 0; trial < 50; ++trial) {
    const Point3 c{Eigen::Vector3d(4 + 8 * u(rng), 6 + 20 * u(rng), 6 + 20 * u(rng)),
                   FrameTag::downsampled(dims)};
    const auto h = generate_heatmap<float>(dims, c, {3.0});
    const auto a = extract_point(h, Extraction::Argmax);
    const auto f = extract_point(h, Extraction::GaussianFit);
    CHECK((a.coords - f.coords).cwiseAbs().maxCoeff() <= 0.5 + 0.05);
  }
}

TEST_CASE("locate preconditions and determinism") {
  LocatorConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 2;
  cfg.in_dims = Dims3(4, 8, 8);
  const auto model = build_locator<float>(cfg, 3);
  ImageVolume vol(Dims3(8, 16, 16), Spacing3::Ones());
  for (Eigen::Index i = 0; i < vol.size(); ++i) vol.data(i) = static_cast<float>((i * 37) % 2000) - 1000.0f;

  CHECK_THROWS_AS(locate(model, vol, {Dims3(8, 8, 8), {}, Extraction::Argmax, 0.5}), ShapeError);
  const LocateOptions opts{cfg.in_dims, {}, Extraction::Argmax, 0.5};
  const auto r1 = locate(model, vol, opts, "a");
  const auto r2 = locate(model, vol, opts, "a");
  CHECK(r1.point_full.coords == r2.point_full.coords);
  CHECK(r1.peak_value == r2.peak_value);
  CHECK(r1.point_full.inside_grid());

  const Point3 flat{Eigen::Vector3d(1, 1, 1), FrameTag::downsampled(cfg.in_dims)};
  HeatmapPredictor negative = [](const ImageVolume& in) {
    return Heatmap<float>(in.dims, in.spacing_mm, -1.0f);
  };
  CHECK_THROWS_AS(locate(negative, vol, {cfg.in_dims, {}, Extraction::GaussianFit, 0.5}), NoPeakError);
  CHECK_NOTHROW(locate(echo(&flat), vol, {cfg.in_dims, {}, Extraction::GaussianFit, 0.5}));
}

TEST_CASE("extracted points outside the grid are clamped") {
  // A peak on the last downsampled voxel maps past the last full-res voxel
  // centre once rescaled with a ratio of 4.
  const Dims3 target(4, 4, 4);
  Heatmap<float> h(target, Spacing3::Ones(), 0.0f);
  h(3, 3, 3) = 1.0f;
  const auto r = localise_heatmap(h, FrameTag::full_res(Dims3(16, 16, 14)), Spacing3::Ones(),
                                  Extraction::Argmax, 0.5, "edge");
  CHECK_FALSE(r.clamped);
  CHECK(r.point_full.coords == Eigen::Vector3d(13.5, 13.5, 11.75));

  Heatmap<float> off(target, Spacing3::Ones(), 0.0f);
  off(0, 0, 0) = 1.0f;
  off(0, 0, 1) = 1.0f;
  const auto r2 = localise_heatmap(off, FrameTag::full_res(Dims3(2, 2, 2)), Spacing3::Ones(),
                                   Extraction::Argmax, 0.5, "low");
  CHECK(r2.point_full.inside_grid());
  CHECK(r2.clamped);
}

TEST_CASE("locate_and_crop") {
  const Dims3 full(24, 32, 32), target(6, 8, 8);
  const auto vol = index_volume(full, Spacing3(1, 1, 1));

  SUBCASE("full-size crop returns the whole volume") {
    const Point3 c{Eigen::Vector3d(2.5, 3.5, 3.5), FrameTag::downsampled(target)};
    const auto out = locate_and_crop(echo(&c), vol, {target, {}, Extraction::GaussianFit, 0.5},
                                     full, -1.0f, "whole");
    CHECK((out.crop.data == vol.data).all());
  }

  SUBCASE("the crop contains the gold voxel when the error is below the half-width") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0), jitter(-3.0, 3.0);
    const Dims3 crop(9, 9, 9);
    for (int trial = 0; trial < 40; ++trial) {
      const Eigen::Vector3d gold_vox(4 + std::floor(16 * u(rng)), 4 + std::floor(24 * u(rng)),
                                     4 + std::floor(24 * u(rng)));
      Point3 guess{gold_vox + Eigen::Vector3d(jitter(rng), jitter(rng), jitter(rng)),
                   FrameTag::full_res(full)};
      for (int a = 0; a < 3; ++a) guess.coords(a) = std::clamp(guess.coords(a), 0.0, full(a) - 1.0);
      Point3 ds = rescale_point(guess, FrameTag::downsampled(target));
      for (int a = 0; a < 3; ++a) ds.coords(a) = std::clamp(ds.coords(a), 0.0, target(a) - 1.0);
      const auto out = locate_and_crop(echo(&ds, 1.0), vol, {target, {}, Extraction::GaussianFit, 0.5},
                                       crop, -1.0f, "c");
      const Eigen::Array3d err = (out.result.point_full.coords - gold_vox).array().abs();
      if ((err < 4.0).all()) {
        const float gold_value = vol(static_cast<int>(gold_vox(0)), static_cast<int>(gold_vox(1)),
                                     static_cast<int>(gold_vox(2)));
        CHECK((out.crop.data == gold_value).any());
      }
    }
  }

  SUBCASE("sidecar round-trips") {
    testing::ScratchDir dir("crop");
    const Point3 c{Eigen::Vector3d(2.2, 4.1, 3.3), FrameTag::downsampled(target)};
    const auto out = locate_and_crop(echo(&c), vol, {target, {}, Extraction::GaussianFit, 0.5},
                                     Dims3(8, 10, 12), 0.0f, "case7");
    write_crop(out, dir.path());
    const auto text = byte_io::read_file(dir / "case7_crop.json");
    Dims3 crop_dims;
    const auto back = parse_sidecar(std::string_view(text.data(), text.size()), &crop_dims);
    CHECK(back.source_id == "case7");
    CHECK(back.point_full.coords == out.result.point_full.coords);
    CHECK(back.point_full.frame == out.result.point_full.frame);
    CHECK(back.point_mm == out.result.point_mm);
    CHECK(back.method == out.result.method);
    CHECK(back.peak_value == out.result.peak_value);
    CHECK(back.clamped == out.result.clamped);
    CHECK((crop_dims == Dims3(8, 10, 12)).all());
    CHECK(same_dims(read_image(dir / "case7_crop.gvol").dims, Dims3(8, 10, 12)));
    CHECK_THROWS_AS(parse_sidecar("{\"id\": 1}"), DataError);
  }
}

TEST_CASE("euclidean_distance_mm") {
  const auto frame = FrameTag::full_res(Dims3(20, 20, 20));
  const Point3 a{Eigen::Vector3d(1, 2, 3), frame};
  CHECK(euclidean_distance_mm(a, a, Spacing3::Ones()) == 0.0);
  const Point3 b{Eigen::Vector3d(1, 2, 13), frame};
  CHECK(euclidean_distance_mm(b, a, Spacing3(3, 2, 0.5)) == doctest::Approx(5.0));

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 19.0), s(0.3, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Point3 p{Eigen::Vector3d(u(rng), u(rng), u(rng)), frame};
    const Point3 q{Eigen::Vector3d(u(rng), u(rng), u(rng)), frame};
    const Spacing3 sp(s(rng), s(rng), s(rng));
    const double dz = (p.coords(0) - q.coords(0)) * sp(0);
    const double dy = (p.coords(1) - q.coords(1)) * sp(1);
    const double dx = (p.coords(2) - q.coords(2)) * sp(2);
    const double d = euclidean_distance_mm(p, q, sp);
    CHECK(d == doctest::Approx(std::sqrt(dz * dz + dy * dy + dx * dx)).epsilon(1e-12));
    CHECK(d == euclidean_distance_mm(q, p, sp));
    CHECK(d >= 0.0);
  }

  const Point3 ds{Eigen::Vector3d(1, 2, 3), FrameTag::downsampled(Dims3(20, 20, 20))};
  CHECK_THROWS_AS(euclidean_distance_mm(a, ds, Spacing3::Ones()), FrameMismatchError);
  const Point3 other{Eigen::Vector3d(1, 2, 3), FrameTag::full_res(Dims3(20, 20, 21))};
  CHECK_THROWS_AS(euclidean_distance_mm(a, other, Spacing3::Ones()), FrameMismatchError);
}

TEST_CASE("summarize") {
  const auto one = summarize({5.0});
  CHECK(one.median_mm == 5.0);
  CHECK(one.std_mm == 0.0);
  CHECK(one.iqr_mm == 0.0);
  CHECK(summarize({4.0, 1.0, 3.0, 2.0}).median_mm == 2.5);
  CHECK(summarize({1, 2, 3, 4, 5}).iqr_mm == 2.0);
  CHECK_THROWS_AS(summarize({}), DataError);

  // Sort-based oracle: middle element(s), two-pass population std, and
  // quartiles interpolated between the bracketing order statistics.
  std::mt19937_64 rng(5);
  std::exponential_distribution<double> e(0.2);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> d(1 + rng() % 40);
    for (auto& v : d) v = e(rng);
    auto sorted = d;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    auto quartile = [&](double q) {
      const double pos = q * static_cast<double>(n - 1);
      const std::size_t i = static_cast<std::size_t>(pos);
      return i + 1 < n ? sorted[i] + (pos - static_cast<double>(i)) * (sorted[i + 1] - sorted[i])
                       : sorted[i];
    };
    const auto s = summarize(d);
    CHECK(s.n == n);
    CHECK(s.median_mm == doctest::Approx(median).epsilon(1e-12));
    CHECK(s.mean_mm == doctest::Approx(mean).epsilon(1e-12));
    CHECK(s.std_mm == doctest::Approx(std::sqrt(ss / static_cast<double>(n))).epsilon(1e-9));
    CHECK(s.iqr_mm == doctest::Approx(quartile(0.75) - quartile(0.25)).epsilon(1e-9));
    CHECK(s.distances == d);
  }
}

TEST_CASE("pooling folds equals summarising the union") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  std::vector<std::vector<double>> folds(5);
  std::vector<double> all;
  for (auto& f : folds) {
    f.resize(3 + rng() % 5);
    for (auto& v : f) v = u(rng);
  }
  std::vector<double> concat;
  for (const auto& f : folds) concat.insert(concat.end(), f.begin(), f.end());
  for (int i = static_cast<int>(folds.size()) - 1; i >= 0; --i)
    all.insert(all.end(), folds[i].begin(), folds[i].end());
  const auto a = summarize(concat), b = summarize(all);
  CHECK(a.median_mm == b.median_mm);
  CHECK(a.mean_mm == doctest::Approx(b.mean_mm).epsilon(1e-14));
  CHECK(a.iqr_mm == b.iqr_mm);
}

TEST_CASE("results csv round trip") {
  std::vector<ResultRow> rows = {
      {"a", Extraction::Argmax, Eigen::Vector3d(1, 2.5, 3.25), 4.5},
      {"b", Extraction::GaussianFit, Eigen::Vector3d(0.1, 1e-7, 127.0 / 3.0)},
  };
  const auto text = results_csv(rows);
  CHECK(text.rfind("id,method,z,y,x,dist_mm\n", 0) == 0);
  const auto back = parse_results_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "a");
  CHECK(back[0].method == Extraction::Argmax);
  CHECK(back[0].dist_mm == 4.5);
  CHECK(back[1].point_full == rows[1].point_full);
  CHECK(std::isnan(back[1].dist_mm));
  CHECK_THROWS_AS(parse_results_csv("id,method,z,y,x,dist_mm\na,argmax,1,2\n"), DataError);
  CHECK_THROWS_AS(parse_extraction("mean"), UsageError);
  CHECK(parse_extraction("fit") == Extraction::GaussianFit);
}
