#include "gaaf/gradcheck_suite.hpp"

#include <random>

#include "gaaf/autodiff/ops.hpp"
#include "gaaf/locator.hpp"

namespace gaaf {

using ad::Shape;
using TensorD = ad::Tensor<double>;

namespace {

class Fixture {
 public:
  explicit Fixture(std::uint64_t seed) : rng_(seed) {}

  TensorD random(Shape shape, bool requires_grad = true, double stddev = 1.0) {
    std::normal_distribution<double> n(0.0, stddev);
    TensorD::Array a(ad::shape_size(shape));
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = n(rng_);
    return TensorD::leaf(std::move(shape), std::move(a), requires_grad);
  }

  /// Like random() but every entry is at least `gap` away from zero.
  TensorD off_zero(Shape shape, double gap) {
    auto t = random(std::move(shape));
    t.mutable_data() = t.data().unaryExpr([gap](double v) { return v >= 0 ? v + gap : v - gap; });
    return t;
  }

  std::uint64_t next_seed() { return rng_(); }

 private:
  std::mt19937_64 rng_;
};

ad::GradCheckReport check(Fixture& fx, const std::function<TensorD()>& op,
                          std::vector<TensorD> params, const std::vector<std::string>& names = {}) {
  const TensorD probe = op();
  const TensorD coeff = fx.random(probe.shape(), false);
  return ad::grad_check([&] { return ad::sum(op() * coeff); }, std::move(params), {}, names);
}

/// Zero biases leave most pre-activations within ~1e-2 of the leaky-ReLU kink
/// once pooling has shrunk the signal, and a 1e-4 step then straddles it.
/// Random biases and a 4^3 input keep them clear.
ad::GradCheckReport check_model(Fixture& fx, bool attention) {
  LocatorConfig c;
  c.levels = 2;
  c.base_channels = 2;
  c.attention = attention;
  c.dropout_p = 0.0;
  c.in_dims = Dims3(4, 4, 4);
  auto model = build_locator<double>(c, fx.next_seed());
  for (auto& p : model.params)
    if (p.shape().size() == 1) p.mutable_data() = fx.random(p.shape(), false, 0.5).data();
  const auto x = fx.random({1, 1, 4, 4, 4}, false);
  return check(
      fx,
      [&] {
        ad::Rng unused(0);
        return forward(model, x, ad::Mode::Eval, unused);
      },
      model.params, model.names);
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed) {
  Fixture fx(seed);
  std::vector<GradCheckCase> out;

  {
    auto x = fx.random({2, 2, 4, 4, 4});
    auto w = fx.random({3, 2, 3, 3, 3});
    auto b = fx.random({3});
    out.push_back({"conv3d k3", check(fx, [&] { return ad::conv3d(x, w, b); }, {x, w, b})});
    auto w1 = fx.random({2, 2, 1, 1, 1});
    auto b1 = fx.random({2});
    out.push_back({"conv3d k1", check(fx, [&] { return ad::conv3d(x, w1, b1); }, {x, w1, b1})});
  }
  {
    auto x = fx.random({2, 2, 4, 2, 6});
    out.push_back({"avgpool2", check(fx, [&] { return ad::avgpool2(x); }, {x})});
    out.push_back({"upsample_nn2", check(fx, [&] { return ad::upsample_nn2(x); }, {x})});
  }
  {
    auto x = fx.off_zero({1, 3, 3, 3, 3}, 0.05);
    out.push_back({"leaky_relu", check(fx, [&] { return ad::leaky_relu(x, 0.01); }, {x})});
    out.push_back({"sigmoid", check(fx, [&] { return ad::sigmoid(x); }, {x})});
  }
  {
    auto x = fx.random({3, 4, 2, 2, 2});
    const std::uint64_t mask_seed = fx.next_seed();
    out.push_back({"spatial_dropout", check(
                                          fx,
                                          [&] {
                                            ad::Rng rng(mask_seed);
                                            return ad::spatial_dropout(x, 0.5, ad::Mode::Train, rng);
                                          },
                                          {x})});
  }
  {
    auto a = fx.random({2, 2, 2, 3, 2});
    auto b = fx.random({2, 3, 2, 3, 2});
    out.push_back({"concat_channels", check(fx, [&] { return ad::concat_channels(a, b); }, {a, b})});
    out.push_back({"slice_channels", check(fx, [&] { return ad::slice_channels(b, 1, 2); }, {b})});
    auto g = fx.random({2, 1, 2, 3, 2});
    out.push_back({"mul_channel_broadcast",
                   check(fx, [&] { return ad::mul_channel_broadcast(b, g); }, {b, g})});
  }
  {
    auto skip = fx.random({2, 4, 4, 4, 4});
    auto gate = fx.random({2, 6, 2, 2, 2});
    AttentionGateWeights<double> w{fx.random({2, 6, 1, 1, 1}), fx.random({2, 4, 1, 1, 1}),
                                   fx.random({2}), fx.random({1, 2, 1, 1, 1}), fx.random({1})};
    out.push_back({"attention_gate",
                   check(fx, [&] { return attention_gate(skip, gate, w).gated; },
                         {skip, gate, w.gate_weight, w.skip_weight, w.bias, w.psi_weight,
                          w.psi_bias})});
  }
  {
    auto target = fx.random({1, 1, 2, 3, 4});
    // The L1 term has a kink at pred == target; keep every residual clear of it.
    auto pred = fx.off_zero({1, 1, 2, 3, 4}, 0.05);
    pred.mutable_data() += target.data();
    out.push_back({"weighted_l2_l1_loss",
                   ad::grad_check([&] { return ad::weighted_l2_l1_loss(pred, target, 1.0, 0.1); },
                                  {pred, target})});
  }
  out.push_back({"locator (attention on)", check_model(fx, true)});
  out.push_back({"locator (attention off)", check_model(fx, false)});
  return out;
}

}  // namespace gaaf
