#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gaaf/autodiff/ops.hpp"
#include "gaaf/volume.hpp"

namespace gaaf {

struct LocatorConfig {
  int levels = 3;
  int base_channels = 8;  ///< doubles per level; the bottleneck has base * 2^levels
  bool attention = true;
  double dropout_p = 0.1;  ///< spatial dropout at the bottleneck
  Dims3 in_dims{64, 128, 128};

  /// Throws UsageError on an unusable configuration.
  void validate() const;
  int channels_at(int level) const { return base_channels << level; }
  int bottleneck_channels() const { return base_channels << levels; }
};

struct ParamSpec {
  std::string name;
  ad::Shape shape;
};

/// Every learnable tensor of the network in registration order. The order is
/// a pure function of the config, which keeps checkpoints stable.
std::vector<ParamSpec> locator_param_specs(const LocatorConfig& config);

/// Parameters are tensor handles: copies of a model share storage, clone()
/// gives an independent snapshot.
template <typename Scalar>
struct LocatorModel {
  LocatorConfig config;
  std::vector<std::string> names;
  std::vector<ad::Tensor<Scalar>> params;

  const ad::Tensor<Scalar>& param(const std::string& name) const;
  ad::Tensor<Scalar>& param(const std::string& name);
  Eigen::Index parameter_count() const;
  LocatorModel clone() const;

 private:
  mutable std::unordered_map<std::string, std::size_t> index_;
  std::size_t find(const std::string& name) const;
};

/// He-uniform weights (bound sqrt(6 / fan_in)) drawn from `seed`, zero biases.
template <typename Scalar>
LocatorModel<Scalar> build_locator(const LocatorConfig& config, std::uint64_t seed);

/// Same architecture and values in another scalar type.
template <typename To, typename From>
LocatorModel<To> cast_model(const LocatorModel<From>& model);

template <typename Scalar>
struct AttentionGateWeights {
  ad::Tensor<Scalar> gate_weight;  ///< [F, C', 1, 1, 1]
  ad::Tensor<Scalar> skip_weight;  ///< [F, C, 1, 1, 1]
  ad::Tensor<Scalar> bias;         ///< [F]
  ad::Tensor<Scalar> psi_weight;   ///< [1, F, 1, 1, 1]
  ad::Tensor<Scalar> psi_bias;     ///< [1]
};

template <typename Scalar>
struct AttentionGateOutput {
  ad::Tensor<Scalar> gated;  ///< skip * alpha
  ad::Tensor<Scalar> alpha;  ///< [B, 1, ...] in (0, 1)
};

/// Additive attention: q = leaky_relu(Wg * up(gate) + Wx * skip + b),
/// alpha = sigmoid(psi * q + b_psi), output = skip * alpha.
/// `gate` lives at half the spatial resolution of `skip`.
template <typename Scalar>
AttentionGateOutput<Scalar> attention_gate(const ad::Tensor<Scalar>& skip,
                                           const ad::Tensor<Scalar>& gate,
                                           const AttentionGateWeights<Scalar>& weights);

/// Runs the network on [B, 1, z, y, x] and returns a same-shape heatmap.
template <typename Scalar>
ad::Tensor<Scalar> forward(const LocatorModel<Scalar>& model, const ad::Tensor<Scalar>& input,
                           ad::Mode mode, ad::Rng& rng);

/// Stacks volumes of identical dims into a [B, 1, z, y, x] tensor.
template <typename Scalar>
ad::Tensor<Scalar> volumes_to_tensor(std::span<const Volume<float>> volumes);

/// Batch entry `b` of a [B, 1, z, y, x] tensor as a volume.
template <typename Scalar>
Volume<float> tensor_to_volume(const ad::Tensor<Scalar>& t, Eigen::Index b,
                               const Spacing3& spacing_mm = Spacing3::Ones());

/// Single container: "GCKP0001", u32 manifest length, JSON manifest
/// {"config": ..., "params": [{"name","shape","offset"}, ...]}, then every
/// parameter as contiguous little-endian f32 (offsets in elements).
void save_checkpoint(const LocatorModel<float>& model, const std::filesystem::path& path);
LocatorModel<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace gaaf
