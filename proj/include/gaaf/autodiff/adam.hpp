#pragma once

#include <vector>

#include "gaaf/autodiff/tensor.hpp"

namespace gaaf::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for each parameter, in parameter order.
template <typename Scalar>
struct AdamState {
  using Array = typename Tensor<Scalar>::Array;

  AdamOptions options;
  std::vector<Array> m;
  std::vector<Array> s;
  long step = 0;

  AdamState() = default;
  AdamState(const std::vector<Tensor<Scalar>>& params, AdamOptions opts);
};

/// One bias-corrected update: m <- b1 m + (1-b1) g, s <- b2 s + (1-b2) g^2,
/// theta <- theta - lr * m_hat / (sqrt(s_hat) + eps). Parameters without a
/// gradient buffer are treated as having zero gradient.
template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, AdamState<Scalar>& state);

extern template struct AdamState<float>;
extern template struct AdamState<double>;

}  // namespace gaaf::ad
