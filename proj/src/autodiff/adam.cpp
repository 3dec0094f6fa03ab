#include "gaaf/autodiff/adam.hpp"

#include <cmath>

namespace gaaf::ad {

template <typename Scalar>
AdamState<Scalar>::AdamState(const std::vector<Tensor<Scalar>>& params, AdamOptions opts)
    : options(opts) {
  m.reserve(params.size());
  s.reserve(params.size());
  for (const auto& p : params) {
    m.push_back(Array::Zero(p.size()));
    s.push_back(Array::Zero(p.size()));
  }
}

template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, AdamState<Scalar>& state) {
  if (params.size() != state.m.size())
    throw ShapeError("adam_step: optimiser state was built for a different parameter list");
  const AdamOptions& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const auto b1 = static_cast<Scalar>(o.beta1);
  const auto b2 = static_cast<Scalar>(o.beta2);
  const auto m_corr = static_cast<Scalar>(1.0 / (1.0 - std::pow(o.beta1, t)));
  const auto s_corr = static_cast<Scalar>(1.0 / (1.0 - std::pow(o.beta2, t)));
  const auto lr = static_cast<Scalar>(o.lr);
  const auto eps = static_cast<Scalar>(o.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (state.m[i].size() != p.size()) throw ShapeError("adam_step: moment/parameter size mismatch");
    if (!p.has_grad()) {
      state.m[i] *= b1;
      state.s[i] *= b2;
    } else {
      const auto& g = p.grad();
      state.m[i] = b1 * state.m[i] + (Scalar(1) - b1) * g;
      state.s[i] = b2 * state.s[i] + (Scalar(1) - b2) * g.square();
    }
    p.mutable_data() -= lr * (state.m[i] * m_corr) / ((state.s[i] * s_corr).sqrt() + eps);
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(std::vector<Tensor<float>>&, AdamState<float>&);
template void adam_step(std::vector<Tensor<double>>&, AdamState<double>&);

}  // namespace gaaf::ad
