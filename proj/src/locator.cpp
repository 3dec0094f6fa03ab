#include "gaaf/locator.hpp"

#include <cmath>
#include <random>

#include "gaaf/byte_io.hpp"
#include "json.hpp"

namespace gaaf {

using ad::Mode;
using ad::Shape;
using ad::Tensor;

namespace {

constexpr std::string_view kCheckpointMagic = "GCKP0001";
constexpr double kLeakySlope = 0.01;

void add_conv(std::vector<ParamSpec>& specs, const std::string& name, int cin, int cout, int k) {
  specs.push_back({name + ".weight", {cout, cin, k, k, k}});
  specs.push_back({name + ".bias", {cout}});
}

int attention_channels(int skip_channels) { return std::max(1, skip_channels / 2); }

template <typename S>
Tensor<S> conv(const LocatorModel<S>& m, const std::string& name, const Tensor<S>& x) {
  return ad::conv3d(x, m.param(name + ".weight"), m.param(name + ".bias"));
}

template <typename S>
Tensor<S> conv_act(const LocatorModel<S>& m, const std::string& name, const Tensor<S>& x) {
  return ad::leaky_relu(conv(m, name, x), static_cast<S>(kLeakySlope));
}

nlohmann::json config_to_json(const LocatorConfig& c) {
  return {{"levels", c.levels},
          {"base_channels", c.base_channels},
          {"attention", c.attention},
          {"dropout_p", c.dropout_p},
          {"in_dims", {c.in_dims(0), c.in_dims(1), c.in_dims(2)}}};
}

LocatorConfig config_from_json(const nlohmann::json& j) {
  LocatorConfig c;
  c.levels = j.at("levels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.attention = j.at("attention").get<bool>();
  c.dropout_p = j.at("dropout_p").get<double>();
  const auto& d = j.at("in_dims");
  c.in_dims = Dims3(d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>());
  return c;
}

}  // namespace

void LocatorConfig::validate() const {
  if (levels < 2) throw UsageError("locator levels must be >= 2");
  if (base_channels < 1) throw UsageError("locator base_channels must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw UsageError("dropout_p must lie in [0, 1)");
  const int factor = 1 << levels;
  bool divisible = true;
  for (int a = 0; a < 3; ++a) divisible = divisible && in_dims(a) >= 1 && in_dims(a) % factor == 0;
  if (!divisible)
    throw UsageError("locator in_dims " + to_string(in_dims) + " must be divisible by 2^levels = " +
                     std::to_string(factor));
}

std::vector<ParamSpec> locator_param_specs(const LocatorConfig& c) {
  c.validate();
  std::vector<ParamSpec> specs;
  int cin = 1;
  for (int l = 0; l < c.levels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    add_conv(specs, p + ".conv1", cin, c.channels_at(l), 3);
    add_conv(specs, p + ".conv2", c.channels_at(l), c.channels_at(l), 3);
    cin = c.channels_at(l);
  }
  add_conv(specs, "bottleneck.conv1", cin, c.bottleneck_channels(), 3);
  add_conv(specs, "bottleneck.conv2", c.bottleneck_channels(), c.bottleneck_channels(), 3);

  int below = c.bottleneck_channels();
  for (int l = c.levels - 1; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    const int ch = c.channels_at(l);
    add_conv(specs, p + ".up", below, ch, 3);
    if (c.attention) {
      const int f = attention_channels(ch);
      specs.push_back({p + ".att.gate.weight", {f, below, 1, 1, 1}});
      specs.push_back({p + ".att.skip.weight", {f, ch, 1, 1, 1}});
      specs.push_back({p + ".att.bias", {f}});
      add_conv(specs, p + ".att.psi", f, 1, 1);
    }
    add_conv(specs, p + ".conv1", 2 * ch, ch, 3);
    add_conv(specs, p + ".conv2", ch, ch, 3);
    below = ch;
  }
  add_conv(specs, "head", c.channels_at(0), 1, 1);
  return specs;
}

template <typename Scalar>
std::size_t LocatorModel<Scalar>::find(const std::string& name) const {
  if (index_.size() != names.size()) {
    index_.clear();
    for (std::size_t i = 0; i < names.size(); ++i) index_.emplace(names[i], i);
  }
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("locator has no parameter '" + name + "'");
  return it->second;
}

template <typename Scalar>
const Tensor<Scalar>& LocatorModel<Scalar>::param(const std::string& name) const {
  return params[find(name)];
}

template <typename Scalar>
Tensor<Scalar>& LocatorModel<Scalar>::param(const std::string& name) {
  return params[find(name)];
}

template <typename Scalar>
Eigen::Index LocatorModel<Scalar>::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

template <typename Scalar>
LocatorModel<Scalar> LocatorModel<Scalar>::clone() const {
  return cast_model<Scalar>(*this);
}

template <typename Scalar>
LocatorModel<Scalar> build_locator(const LocatorConfig& config, std::uint64_t seed) {
  const auto specs = locator_param_specs(config);
  ad::Rng rng(seed);
  LocatorModel<Scalar> model;
  model.config = config;
  for (const auto& spec : specs) {
    const Eigen::Index n = ad::shape_size(spec.shape);
    typename Tensor<Scalar>::Array values = Tensor<Scalar>::Array::Zero(n);
    if (spec.shape.size() == 5) {
      const double fan_in = static_cast<double>(spec.shape[1] * spec.shape[2] * spec.shape[3] *
                                                spec.shape[4]);
      const double bound = std::sqrt(6.0 / fan_in);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index i = 0; i < n; ++i) values(i) = static_cast<Scalar>(dist(rng));
    }
    model.names.push_back(spec.name);
    model.params.push_back(Tensor<Scalar>::leaf(spec.shape, std::move(values), true));
  }
  return model;
}

template <typename To, typename From>
LocatorModel<To> cast_model(const LocatorModel<From>& model) {
  LocatorModel<To> out;
  out.config = model.config;
  out.names = model.names;
  for (const auto& p : model.params)
    out.params.push_back(Tensor<To>::leaf(p.shape(), p.data().template cast<To>(), true));
  return out;
}

template <typename Scalar>
AttentionGateOutput<Scalar> attention_gate(const Tensor<Scalar>& skip, const Tensor<Scalar>& gate,
                                           const AttentionGateWeights<Scalar>& w) {
  const Shape& ss = skip.shape();
  const Shape& gs = gate.shape();
  if (ss.size() != 5 || gs.size() != 5 || gs[0] != ss[0] || gs[2] * 2 != ss[2] ||
      gs[3] * 2 != ss[3] || gs[4] * 2 != ss[4])
    throw ShapeError("attention_gate: gate " + ad::to_string(gs) +
                     " must have half the spatial size of skip " + ad::to_string(ss));
  const Eigen::Index f = w.bias.size();
  const auto no_bias = Tensor<Scalar>::zeros({f});

  const auto gate_up = ad::upsample_nn2(gate);
  const auto q = ad::leaky_relu(
      ad::conv3d(gate_up, w.gate_weight, w.bias) + ad::conv3d(skip, w.skip_weight, no_bias),
      static_cast<Scalar>(kLeakySlope));
  auto alpha = ad::sigmoid(ad::conv3d(q, w.psi_weight, w.psi_bias));
  return {ad::mul_channel_broadcast(skip, alpha), alpha};
}

template <typename Scalar>
Tensor<Scalar> forward(const LocatorModel<Scalar>& model, const Tensor<Scalar>& input, Mode mode,
                       ad::Rng& rng) {
  const LocatorConfig& c = model.config;
  const Shape& s = input.shape();
  if (s.size() != 5 || s[1] != 1 || s[2] != c.in_dims(0) || s[3] != c.in_dims(1) ||
      s[4] != c.in_dims(2))
    throw ShapeError("locator expects input [B,1," + std::to_string(c.in_dims(0)) + "," +
                     std::to_string(c.in_dims(1)) + "," + std::to_string(c.in_dims(2)) +
                     "], got " + ad::to_string(s));

  Tensor<Scalar> x = input;
  std::vector<Tensor<Scalar>> skips;
  for (int l = 0; l < c.levels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    x = conv_act(model, p + ".conv1", x);
    x = conv_act(model, p + ".conv2", x);
    skips.push_back(x);
    x = ad::avgpool2(x);
  }
  x = conv_act(model, "bottleneck.conv1", x);
  x = conv_act(model, "bottleneck.conv2", x);
  x = ad::spatial_dropout(x, c.dropout_p, mode, rng);

  for (int l = c.levels - 1; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    const auto up = conv_act(model, p + ".up", ad::upsample_nn2(x));
    Tensor<Scalar> skip = skips[static_cast<std::size_t>(l)];
    if (c.attention) {
      const AttentionGateWeights<Scalar> w{
          model.param(p + ".att.gate.weight"), model.param(p + ".att.skip.weight"),
          model.param(p + ".att.bias"), model.param(p + ".att.psi.weight"),
          model.param(p + ".att.psi.bias")};
      skip = attention_gate(skip, x, w).gated;
    }
    x = ad::concat_channels(skip, up);
    x = conv_act(model, p + ".conv1", x);
    x = conv_act(model, p + ".conv2", x);
  }
  return conv(model, "head", x);
}

template <typename Scalar>
Tensor<Scalar> volumes_to_tensor(std::span<const Volume<float>> volumes) {
  if (volumes.empty()) throw ShapeError("volumes_to_tensor: empty batch");
  const Dims3 dims = volumes.front().dims;
  const Eigen::Index n = voxel_count(dims);
  typename Tensor<Scalar>::Array data(n * static_cast<Eigen::Index>(volumes.size()));
  for (std::size_t b = 0; b < volumes.size(); ++b) {
    if (!same_dims(volumes[b].dims, dims))
      throw ShapeError("volumes_to_tensor: batch mixes dims");
    data.segment(static_cast<Eigen::Index>(b) * n, n) = volumes[b].data.template cast<Scalar>();
  }
  return Tensor<Scalar>::leaf({static_cast<Eigen::Index>(volumes.size()), 1, dims(0), dims(1), dims(2)},
                              std::move(data));
}

template <typename Scalar>
Volume<float> tensor_to_volume(const Tensor<Scalar>& t, Eigen::Index b, const Spacing3& spacing_mm) {
  const Shape& s = t.shape();
  if (s.size() != 5 || s[1] != 1 || b < 0 || b >= s[0])
    throw ShapeError("tensor_to_volume: expected [B,1,z,y,x], got " + ad::to_string(s));
  Volume<float> vol(Dims3(static_cast<int>(s[2]), static_cast<int>(s[3]), static_cast<int>(s[4])),
                    spacing_mm);
  vol.data = t.data().segment(b * vol.size(), vol.size()).template cast<float>();
  return vol;
}

void save_checkpoint(const LocatorModel<float>& model, const std::filesystem::path& path) {
  nlohmann::json params = nlohmann::json::array();
  std::vector<char> blob;
  blob.reserve(static_cast<std::size_t>(model.parameter_count()) * sizeof(float));
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& p = model.params[i];
    params.push_back({{"name", model.names[i]}, {"shape", p.shape()}, {"offset", offset}});
    for (Eigen::Index k = 0; k < p.size(); ++k) byte_io::append_le<float>(blob, p.data()(k));
    offset += p.size();
  }
  const nlohmann::json manifest = {{"config", config_to_json(model.config)}, {"params", params}};
  byte_io::write_file(path, byte_io::frame(kCheckpointMagic, manifest.dump(), blob));
}

LocatorModel<float> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = byte_io::read_file(path);
  byte_io::UnframeStatus status{};
  const auto framed = byte_io::unframe(bytes, kCheckpointMagic, status);
  if (status != byte_io::UnframeStatus::Ok)
    throw DataError(path.string() + ": not a GCKP0001 checkpoint");

  LocatorModel<float> model;
  try {
    const auto manifest = nlohmann::json::parse(framed.header);
    model.config = config_from_json(manifest.at("config"));
    const auto expected = locator_param_specs(model.config);
    const auto& entries = manifest.at("params");
    if (entries.size() != expected.size())
      throw DataError("parameter list does not match the architecture");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<Eigen::Index>();
      if (name != expected[i].name || shape != expected[i].shape)
        throw DataError("parameter " + std::to_string(i) + " is '" + name +
                        "', architecture expects '" + expected[i].name + "'");
      const Eigen::Index n = ad::shape_size(shape);
      if (offset < 0 || static_cast<std::size_t>(offset + n) * sizeof(float) > framed.payload.size())
        throw DataError("parameter '" + name + "' runs past the end of the blob");
      Tensor<float>::Array values(n);
      for (Eigen::Index k = 0; k < n; ++k)
        values(k) = byte_io::load_le<float>(framed.payload.data() +
                                            static_cast<std::size_t>(offset + k) * sizeof(float));
      model.names.push_back(name);
      model.params.push_back(Tensor<float>::leaf(shape, std::move(values), true));
    }
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const std::exception& e) {
    throw DataError(path.string() + ": bad checkpoint manifest: " + e.what());
  }
  return model;
}

template struct LocatorModel<float>;
template struct LocatorModel<double>;
template LocatorModel<float> build_locator(const LocatorConfig&, std::uint64_t);
template LocatorModel<double> build_locator(const LocatorConfig&, std::uint64_t);
template LocatorModel<float> cast_model(const LocatorModel<float>&);
template LocatorModel<float> cast_model(const LocatorModel<double>&);
template LocatorModel<double> cast_model(const LocatorModel<float>&);
template LocatorModel<double> cast_model(const LocatorModel<double>&);
template AttentionGateOutput<float> attention_gate(const Tensor<float>&, const Tensor<float>&,
                                                   const AttentionGateWeights<float>&);
template AttentionGateOutput<double> attention_gate(const Tensor<double>&, const Tensor<double>&,
                                                    const AttentionGateWeights<double>&);
template Tensor<float> forward(const LocatorModel<float>&, const Tensor<float>&, Mode, ad::Rng&);
template Tensor<double> forward(const LocatorModel<double>&, const Tensor<double>&, Mode, ad::Rng&);
template Tensor<float> volumes_to_tensor(std::span<const Volume<float>>);
template Tensor<double> volumes_to_tensor(std::span<const Volume<float>>);
template Volume<float> tensor_to_volume(const Tensor<float>&, Eigen::Index, const Spacing3&);
template Volume<float> tensor_to_volume(const Tensor<double>&, Eigen::Index, const Spacing3&);

}  // namespace gaaf
