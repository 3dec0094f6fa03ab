#include <random>

#include "doctest.h"
#include "gaaf/autodiff/adam.hpp"
#include "gaaf/autodiff/grad_check.hpp"
#include "gaaf/byte_io.hpp"
#include "gaaf/gradcheck_suite.hpp"
#include "gaaf/heatmap.hpp"
#include "gaaf/locator.hpp"
#include "test_support.hpp"

using namespace gaaf;
using ad::Mode;
using ad::Shape;
using TensorD = ad::Tensor<double>;
using TensorF = ad::Tensor<float>;

namespace {

LocatorConfig tiny_config(bool attention) {
  LocatorConfig c;
  c.levels = 2;
  c.base_channels = 2;
  c.attention = attention;
  c.dropout_p = 0.0;
  c.in_dims = Dims3(8, 8, 8);
  return c;
}

template <typename S>
ad::Tensor<S> random_input(const LocatorConfig& c, int batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const Shape shape{batch, 1, c.in_dims(0), c.in_dims(1), c.in_dims(2)};
  typename ad::Tensor<S>::Array a(ad::shape_size(shape));
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = static_cast<S>(n(rng));
  return ad::Tensor<S>::leaf(shape, std::move(a));
}

}  // namespace

TEST_CASE("config validation") {
  auto c = tiny_config(true);
  CHECK_NOTHROW(c.validate());
  c.in_dims = Dims3(8, 6, 8);
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = tiny_config(true);
  c.levels = 1;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = tiny_config(true);
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("parameter count matches the hand tally") {
  // conv(cin, cout, k) holds cout*cin*k^3 weights and cout biases.
  CHECK(build_locator<float>(tiny_config(false), 1).parameter_count() == 6151);
  // Attention adds gate, skip, bias and psi for each decoder level.
  CHECK(build_locator<float>(tiny_config(true), 1).parameter_count() == 6151 + 29 + 9);
}

TEST_CASE("forward output shape and seeding") {
  const auto c = tiny_config(true);
  const auto m = build_locator<float>(c, 3);
  ad::Rng rng(0);
  const auto y = forward(m, random_input<float>(c, 2, 1), Mode::Eval, rng);
  CHECK(y.shape() == Shape{2, 1, 8, 8, 8});
  CHECK(y.data().allFinite());

  const auto m2 = build_locator<float>(c, 3);
  const auto m3 = build_locator<float>(c, 4);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    same = same && (m.params[i].data() == m2.params[i].data()).all();
    differs = differs || (m.params[i].data() != m3.params[i].data()).any();
  }
  CHECK(same);
  CHECK(differs);

  CHECK_THROWS_AS(forward(m, TensorF::zeros({1, 1, 8, 8, 4}), Mode::Eval, rng), ShapeError);
}

TEST_CASE("attention gate") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  auto random = [&](Shape s, bool grad = true) {
    TensorD::Array a(ad::shape_size(s));
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = n(rng);
    return TensorD::leaf(std::move(s), std::move(a), grad);
  };
  auto skip = random({2, 4, 4, 4, 4});
  auto gate = random({2, 6, 2, 2, 2});
  AttentionGateWeights<double> w{random({2, 6, 1, 1, 1}), random({2, 4, 1, 1, 1}), random({2}),
                                 random({1, 2, 1, 1, 1}), random({1})};

  SUBCASE("alpha lies strictly inside (0, 1)") {
    const auto out = attention_gate(skip, gate, w);
    CHECK(out.alpha.shape() == Shape{2, 1, 4, 4, 4});
    CHECK(out.alpha.data().minCoeff() > 0.0);
    CHECK(out.alpha.data().maxCoeff() < 1.0);
    CHECK(out.gated.shape() == skip.shape());
  }
  SUBCASE("zero psi gives alpha = 0.5 everywhere") {
    w.psi_weight.mutable_data().setZero();
    w.psi_bias.mutable_data().setZero();
    const auto out = attention_gate(skip, gate, w);
    CHECK((out.alpha.data() == 0.5).all());
    CHECK((out.gated.data() - 0.5 * skip.data()).abs().maxCoeff() == 0.0);
  }
  SUBCASE("gradients through the gate") {
    std::mt19937_64 wr(17);
    TensorD::Array coeff(skip.size());
    for (Eigen::Index i = 0; i < coeff.size(); ++i) coeff(i) = n(wr);
    const auto c = TensorD::leaf(skip.shape(), coeff);
    const auto r = ad::grad_check(
        [&] { return ad::sum(attention_gate(skip, gate, w).gated * c); },
        {skip, gate, w.gate_weight, w.skip_weight, w.bias, w.psi_weight, w.psi_bias});
    CHECK_MESSAGE(r.passed, r.worst_entry << " rel=" << r.max_rel_error);
  }
  SUBCASE("spatial mismatch") {
    CHECK_THROWS_AS(attention_gate(skip, random({2, 6, 4, 4, 4}), w), ShapeError);
  }
}

TEST_CASE("zero-psi attention reduces to a plain decoder with halved skip weights") {
  const auto att_cfg = tiny_config(true);
  auto att = build_locator<double>(att_cfg, 11);
  for (std::size_t i = 0; i < att.names.size(); ++i)
    if (att.names[i].find(".att.psi.") != std::string::npos) att.params[i].mutable_data().setZero();

  auto plain = build_locator<double>(tiny_config(false), 99);
  for (std::size_t i = 0; i < plain.names.size(); ++i)
    plain.params[i].mutable_data() = att.param(plain.names[i]).data();
  for (int l = 0; l < att_cfg.levels; ++l) {
    auto& w = plain.param("dec" + std::to_string(l) + ".conv1.weight");
    const auto co = w.dim(0), ci = w.dim(1), k3 = w.dim(2) * w.dim(3) * w.dim(4);
    for (Eigen::Index o = 0; o < co; ++o)
      w.mutable_data().segment(o * ci * k3, (ci / 2) * k3) *= 0.5;
  }

  const auto x = random_input<double>(att_cfg, 2, 3);
  ad::Rng rng(0);
  const auto ya = forward(att, x, Mode::Eval, rng);
  const auto yp = forward(plain, x, Mode::Eval, rng);
  CHECK((ya.data() - yp.data()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("full-model gradients match finite differences") {
  for (const bool attention : {true, false}) {
    CAPTURE(attention);
    const auto c = tiny_config(attention);
    const auto m = build_locator<double>(c, 21);
    const auto x = random_input<double>(c, 1, 4);
    const auto coeff = random_input<double>(c, 1, 5);
    // Some pre-activations sit within 1e-4 of a leaky-ReLU kink; a smaller
    // step keeps central differences on one side of it.
    ad::GradCheckOptions opts;
    opts.eps = 1e-6;
    opts.denom_floor = 1e-4;
    opts.max_entries_per_param = 40;
    const auto r = ad::grad_check(
        [&] {
          ad::Rng rng(0);
          return ad::sum(forward(m, x, Mode::Eval, rng) * coeff);
        },
        m.params, opts, m.names);
    CHECK_MESSAGE(r.passed, r.worst_entry << " rel=" << r.max_rel_error);
    CHECK(r.entries_checked > 0);
  }
}

TEST_CASE("eval mode is deterministic and train-mode dropout is seeded") {
  auto c = tiny_config(true);
  c.dropout_p = 0.5;
  const auto m = build_locator<float>(c, 2);
  const auto x = random_input<float>(c, 1, 6);
  ad::Rng r1(1), r2(2), r3(1);
  CHECK((forward(m, x, Mode::Eval, r1).data() == forward(m, x, Mode::Eval, r2).data()).all());

  ad::Rng t1(5), t2(5);
  CHECK((forward(m, x, Mode::Train, t1).data() == forward(m, x, Mode::Train, t2).data()).all());
}

TEST_CASE("checkpoint round trip") {
  testing::ScratchDir dir("ckpt");
  const auto c = tiny_config(true);
  const auto m = build_locator<float>(c, 8);
  save_checkpoint(m, dir / "model.gckp");
  const auto back = load_checkpoint(dir / "model.gckp");
  CHECK(back.names == m.names);
  CHECK(back.config.attention == c.attention);
  CHECK((back.config.in_dims == c.in_dims).all());
  const auto x = random_input<float>(c, 1, 9);
  ad::Rng rng(0);
  CHECK((forward(m, x, Mode::Eval, rng).data() == forward(back, x, Mode::Eval, rng).data()).all());

  SUBCASE("corrupted files are data errors") {
    auto bytes = byte_io::read_file(dir / "model.gckp");
    bytes.resize(bytes.size() - 4);
    byte_io::write_file(dir / "short.gckp", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.gckp"), DataError);
    bytes[0] = 'X';
    byte_io::write_file(dir / "magic.gckp", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.gckp"), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.gckp"), DataError);
  }
}

TEST_CASE("clone is independent of the original") {
  const auto m = build_locator<float>(tiny_config(false), 1);
  auto copy = m.clone();
  copy.params[0].mutable_data().setZero();
  CHECK(m.params[0].data().abs().maxCoeff() > 0.0f);
}

TEST_CASE("volume tensor conversions round-trip") {
  std::mt19937_64 rng(3);
  std::vector<Volume<float>> vols;
  for (int i = 0; i < 3; ++i) {
    Volume<float> v(Dims3(2, 3, 4), Spacing3(1, 2, 3));
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data(k) = static_cast<float>(rng() % 1000);
    vols.push_back(v);
  }
  const auto t = volumes_to_tensor<float>(vols);
  CHECK(t.shape() == Shape{3, 1, 2, 3, 4});
  for (int i = 0; i < 3; ++i) CHECK((tensor_to_volume(t, i).data == vols[i].data).all());
}

TEST_CASE("a tiny locator overfits a single heatmap") {
  const auto c = tiny_config(true);
  const auto m = build_locator<float>(c, 5);
  const auto x = random_input<float>(c, 1, 7);
  const Dims3 d = c.in_dims;
  const auto target_vol =
      generate_heatmap<float>(d, {Eigen::Vector3d(3, 4, 5), FrameTag::downsampled(d)}, {1.5});
  const auto target = TensorF::leaf({1, 1, 8, 8, 8}, target_vol.data);

  ad::AdamState<float> state(m.params, ad::AdamOptions{1e-2});
  ad::Rng rng(0);
  float first = 0, last = 0;
  for (int step = 0; step < 200; ++step) {
    for (auto p : m.params) p.zero_grad();
    auto loss = ad::weighted_l2_l1_loss(forward(m, x, Mode::Train, rng), target, 1.0f, 0.1f);
    loss.backward();
    if (step == 0) first = loss.item();
    last = loss.item();
    auto params = m.params;
    ad::adam_step(params, state);
  }
  CHECK(last < 0.2f * first);
  const auto pred = tensor_to_volume(forward(m, x, Mode::Eval, rng), 0);
  CHECK(argmax_location(pred).coords == Eigen::Vector3d(3, 4, 5));
}

TEST_CASE("gradient-check suite passes") {
  const auto cases = run_gradcheck_suite();
  CHECK(cases.size() == 14);
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK_MESSAGE(c.report.passed, c.report.worst_entry << " rel=" << c.report.max_rel_error);
  }
}
