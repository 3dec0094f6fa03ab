#pragma once

#include <random>

#include "gaaf/autodiff/tensor.hpp"

namespace gaaf::ad {

using Rng = std::mt19937_64;

enum class Mode { Train, Eval };

// Volumetric tensors use the layout [batch, channel, z, y, x].

/// Cross-correlation with a cubic odd kernel, stride 1, zero padding k/2
/// (same-size output). weight [Cout, Cin, k, k, k], bias [Cout].
template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

/// Non-overlapping 2x2x2 mean; spatial dims must be even.
template <typename Scalar>
Tensor<Scalar> avgpool2(const Tensor<Scalar>& input);

/// Nearest-neighbour replication by 2 along each spatial axis.
template <typename Scalar>
Tensor<Scalar> upsample_nn2(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& x, Scalar slope = Scalar(0.01));

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

/// Train mode zeroes whole (batch, channel) slices with probability p and
/// scales survivors by 1/(1-p). Eval mode, or p == 0, is the identity.
template <typename Scalar>
Tensor<Scalar> spatial_dropout(const Tensor<Scalar>& x, double p, Mode mode, Rng& rng);

/// Concatenation along axis 1.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Channels [first, first + count) of x.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& x, Eigen::Index first, Eigen::Index count);

/// x [B,C,...] times gate [B,1,...], the gate broadcast over channels.
template <typename Scalar>
Tensor<Scalar> mul_channel_broadcast(const Tensor<Scalar>& x, const Tensor<Scalar>& gate);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x);

/// w2 * mean((p - t)^2) + w1 * mean(|p - t|); the L1 subgradient at p == t is 0.
template <typename Scalar>
Tensor<Scalar> weighted_l2_l1_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target,
                                   Scalar w2, Scalar w1);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return mul(a, b);
}

template <typename Scalar>
Tensor<Scalar> operator*(Scalar factor, const Tensor<Scalar>& x) {
  return scale(x, factor);
}

}  // namespace gaaf::ad
