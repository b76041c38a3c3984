// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#include "reko/models.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "reko/random.hpp"

namespace reko {

namespace {

// He gain for a leaky ReLU with the fixed slope.
const double kLeakyGain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));

NamedTensor conv_weight(const std::string& name, Shape shape, double fan_in,
                        double gain, Rng& rng) {
  return {name + ".weight",
          randn(std::move(shape), gain / std::sqrt(fan_in), rng, true)};
}

NamedTensor zero_bias(const std::string& name, std::size_t n) {
  return {name + ".bias", Tensor::zeros({n}, true)};
}

ConvLayer make_layer(const std::vector<NamedTensor>& params, std::size_t& at,
                     ConvParams p, bool transposed) {
  ConvLayer layer{params[at].tensor, params[at + 1].tensor, p, transposed};
  at += 2;
  return layer;
}

constexpr ConvParams kDown{2, 1, 0};
constexpr ConvParams kSame{1, 1, 0};
constexpr ConvParams kUp{2, 1, 1};

}  // namespace

Tensor ConvLayer::operator()(const Tensor& x) const {
  return transposed ? conv_transpose2d(x, weight, bias, params)
                    : conv2d(x, weight, bias, params);
}

void GeneratorSpec::validate() const {
  if (base_width < 2) throw std::invalid_argument("base_width must be >= 2");
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (channels < 1) throw std::invalid_argument("channels must be >= 1");
  if (image_size == 0 || image_size % (std::size_t{1} << depth) != 0) {
    throw std::invalid_argument("image_size " + std::to_string(image_size) +
                                " is not divisible by 2^depth = " +
                                std::to_string(std::size_t{1} << depth));
  }
}

nlohmann::json GeneratorSpec::to_json() const {
  return {{"base_width", base_width},
          {"depth", depth},
          {"image_size", image_size},
          {"channels", channels},
          {"res_blocks", res_blocks}};
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  s.base_width = j.value("base_width", s.base_width);
  s.depth = j.value("depth", s.depth);
  s.image_size = j.value("image_size", s.image_size);
  s.channels = j.value("channels", s.channels);
  s.res_blocks = j.value("res_blocks", s.res_blocks);
  return s;
}

Generator::Generator(GeneratorSpec spec, std::uint64_t seed)
    : spec_(spec), seed_(seed) {
  spec_.validate();
  Rng rng(seed);
  const std::size_t w = spec_.base_width;
  for (std::size_t i = 0; i < spec_.depth; ++i) {
    const std::size_t cin = i == 0 ? spec_.channels : w << (i - 1);
    const std::size_t cout = w << i;
    const std::string name = "enc" + std::to_string(i);
    params_.push_back(conv_weight(name, {cout, cin, 3, 3},
                                  static_cast<double>(cin * 9), kLeakyGain,
                                  rng));
    params_.push_back(zero_bias(name, cout));
  }
  const std::size_t c = spec_.bottleneck_channels();
  for (std::size_t r = 0; r < spec_.res_blocks; ++r) {
    const std::string name = "res" + std::to_string(r);
    params_.push_back(conv_weight(name + ".a", {c, c, 3, 3},
                                  static_cast<double>(c * 9), kLeakyGain, rng));
    params_.push_back(zero_bias(name + ".a", c));
    params_.push_back(conv_weight(name + ".b", {c, c, 3, 3},
                                  static_cast<double>(c * 9), 0.5, rng));
    params_.push_back(zero_bias(name + ".b", c));
  }
  for (std::size_t i = 0; i < spec_.depth; ++i) {
    const std::size_t cin = w << (spec_.depth - 1 - i);
    const bool last = i + 1 == spec_.depth;
    const std::size_t cout = last ? spec_.channels : w << (spec_.depth - 2 - i);
    const std::string name = "dec" + std::to_string(i);
    // A stride-2 transposed conv feeds each output from ~cin·9/4 inputs.
    params_.push_back(conv_weight(name, {cin, cout, 3, 3},
                                  static_cast<double>(cin * 9) / 4.0,
                                  last ? 1.0 : kLeakyGain, rng));
    params_.push_back(zero_bias(name, cout));
  }
  bind_layers();
}

void Generator::bind_layers() {
  encoder_.clear();
  residual_.clear();
  decoder_.clear();
  std::size_t at = 0;
  for (std::size_t i = 0; i < spec_.depth; ++i) {
    encoder_.push_back(make_layer(params_, at, kDown, false));
  }
  for (std::size_t r = 0; r < 2 * spec_.res_blocks; ++r) {
    residual_.push_back(make_layer(params_, at, kSame, false));
  }
  for (std::size_t i = 0; i < spec_.depth; ++i) {
    decoder_.push_back(make_layer(params_, at, kUp, true));
  }
}

Generator::Output Generator::forward(const Tensor& images) const {
  const Shape expected{spec_.channels, spec_.image_size, spec_.image_size};
  if (images.rank() != 4 ||
      Shape(images.shape().begin() + 1, images.shape().end()) != expected) {
    throw TensorError("Generator: expected N×" + std::to_string(spec_.channels) +
                      "×" + std::to_string(spec_.image_size) + "×" +
                      std::to_string(spec_.image_size) + " images, got " +
                      shape_str(images.shape()));
  }
  Tensor h = images;
  for (const auto& layer : encoder_) h = leaky_relu(layer(h));
  for (std::size_t r = 0; r < residual_.size(); r += 2) {
    h = add(h, residual_[r + 1](leaky_relu(residual_[r](h))));
  }
  Tensor bottleneck = h;
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    h = decoder_[i](h);
    h = i + 1 == decoder_.size() ? tanh(h) : leaky_relu(h);
  }
  return {h, bottleneck};
}

std::vector<Tensor> Generator::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

std::size_t Generator::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void Generator::set_trainable(bool trainable) {
  for (auto& p : params_) {
    p.tensor.set_requires_grad(trainable);
    p.tensor.zero_grad();
  }
}

std::filesystem::path Generator::save(const std::filesystem::path& dir,
                                      const nlohmann::json& extra) const {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["generator_spec"] = spec_.to_json();
  meta["init_seed"] = seed_;
  return save_checkpoint(dir, params_, meta);
}

Generator Generator::load(const std::filesystem::path& manifest) {
  Checkpoint ck = load_checkpoint(manifest);
  if (!ck.meta.contains("generator_spec")) {
    throw IoError(manifest.string() + ": manifest has no generator_spec");
  }
  Generator g(GeneratorSpec::from_json(ck.meta["generator_spec"]),
              ck.meta.value("init_seed", std::uint64_t{0}));
  for (auto& p : g.params_) {
    auto it = ck.tensors.find(p.name);
    if (it == ck.tensors.end()) {
      throw IoError(manifest.string() + ": missing tensor " + p.name);
    }
    if (it->second.shape() != p.tensor.shape()) {
      throw IoError(manifest.string() + ": tensor " + p.name + " has shape " +
                    shape_str(it->second.shape()) + ", spec expects " +
                    shape_str(p.tensor.shape()));
    }
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
  }
  if (ck.tensors.size() != g.params_.size()) {
    throw IoError(manifest.string() + ": unexpected extra tensors");
  }
  return g;
}

std::size_t DiscriminatorSpec::receptive_field() const {
  std::size_t rf = 1;
  std::size_t jump = 1;
  for (std::size_t i = 0; i < layers; ++i) {
    rf += 2 * jump;
    jump *= 2;
  }
  return rf + 2 * jump;  // final 3×3 score conv
}

Discriminator::Discriminator(DiscriminatorSpec spec, std::uint64_t seed)
    : spec_(spec) {
  if (spec_.layers < 1 || spec_.base_width < 1) {
    throw std::invalid_argument("discriminator needs >= 1 layer and width");
  }
  Rng rng(seed);
  std::size_t cin = spec_.channels;
  for (std::size_t i = 0; i < spec_.layers; ++i) {
    const std::size_t cout = spec_.base_width << i;
    const std::string name = "d" + std::to_string(i);
    params_.push_back(conv_weight(name, {cout, cin, 3, 3},
                                  static_cast<double>(cin * 9), kLeakyGain,
                                  rng));
    params_.push_back(zero_bias(name, cout));
    cin = cout;
  }
  params_.push_back(
      conv_weight("score", {1, cin, 3, 3}, static_cast<double>(cin * 9), 1.0,
                  rng));
  params_.push_back(zero_bias("score", 1));
  std::size_t at = 0;
  for (std::size_t i = 0; i < spec_.layers; ++i) {
    layers_.push_back(make_layer(params_, at, kDown, false));
  }
  layers_.push_back(make_layer(params_, at, kSame, false));
}

Tensor Discriminator::forward(const Tensor& images) const {
  Tensor h = images;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    h = leaky_relu(layers_[i](h));
  }
  return layers_.back()(h);
}

std::vector<Tensor> Discriminator::parameter_tensors() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

namespace {

// Numerically stable log(1 + e^x) = relu(x) + log(1 + e^−|x|).
Tensor softplus(const Tensor& x) {
  return add(relu(x), log(add_scalar(exp(scale(abs(x), -1.0)), 1.0)));
}

}  // namespace

Tensor Discriminator::loss_real_fake(const Tensor& real,
                                     const Tensor& fake) const {
  Tensor dr = forward(real);
  Tensor df = forward(fake);
  if (spec_.least_squares) {
    return scale(add(mean(square(add_scalar(dr, -1.0))), mean(square(df))),
                 0.5);
  }
  return add(mean(softplus(scale(dr, -1.0))), mean(softplus(df)));
}

Tensor Discriminator::generator_loss(const Tensor& fake) const {
  Tensor df = forward(fake);
  if (spec_.least_squares) return mean(square(add_scalar(df, -1.0)));
  return mean(softplus(scale(df, -1.0)));
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    auto g = params_[i].grad();
    auto w = params_[i].mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
      v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
      w[j] -= opt_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opt_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace reko
