// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "reko/attention.hpp"
#include "reko/serialize.hpp"
#include "reko/tensor.hpp"

namespace reko {

/// Encoder–decoder generator shape. Teacher and student builds differ only
/// in base_width, so their bottleneck grids always line up.
struct GeneratorSpec {
  std::size_t base_width = 32;
  std::size_t depth = 3;
  std::size_t image_size = 64;
  std::size_t channels = 3;
  std::size_t res_blocks = 2;

  std::size_t bottleneck_size() const { return image_size >> depth; }
  std::size_t bottleneck_channels() const {
    return base_width << (depth - 1);
  }
  void validate() const;

  nlohmann::json to_json() const;
  static GeneratorSpec from_json(const nlohmann::json& j);
  bool operator==(const GeneratorSpec&) const = default;
};

struct ConvLayer {
  Tensor weight;
  Tensor bias;
  ConvParams params;
  bool transposed = false;

  Tensor operator()(const Tensor& x) const;
};

/// Strided conv encoder → residual blocks → transposed-conv decoder with a
/// tanh head. Convolutions are plain conv + leaky ReLU, no normalisation.
class Generator {
 public:
  Generator(GeneratorSpec spec, std::uint64_t seed);

  struct Output {
    Tensor image;       // N×C×H×W in [−1, 1]
    Tensor bottleneck;  // N×c×h×w, the distilled encoder feature
  };

  Output forward(const Tensor& images) const;
  Tensor translate(const Tensor& images) const { return forward(images).image; }

  const GeneratorSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  std::size_t parameter_count() const;
  void set_trainable(bool trainable);

  std::filesystem::path save(const std::filesystem::path& dir,
                             const nlohmann::json& extra = {}) const;
  /// Rebuilds the network from a manifest; the stored spec is checked
  /// against the tensors' shapes.
  static Generator load(const std::filesystem::path& manifest);

 private:
  void bind_layers();

  GeneratorSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<NamedTensor> params_;
  std::vector<ConvLayer> encoder_;
  std::vector<ConvLayer> residual_;  // two convs per block
  std::vector<ConvLayer> decoder_;
};

struct DiscriminatorSpec {
  std::size_t base_width = 16;
  std::size_t channels = 3;
  std::size_t layers = 2;   // stride-2 stages before the score conv
  bool least_squares = true;

  /// Side of the square input patch each score sees.
  std::size_t receptive_field() const;
};

/// Patch discriminator: strided convs down to a grid of realness scores.
class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, std::uint64_t seed);

  Tensor forward(const Tensor& images) const;  // N×1×h×w scores
  const DiscriminatorSpec& spec() const { return spec_; }
  std::vector<Tensor> parameter_tensors() const;

  /// LSGAN objectives.
  Tensor loss_real_fake(const Tensor& real, const Tensor& fake) const;
  Tensor generator_loss(const Tensor& fake) const;

 private:
  DiscriminatorSpec spec_;
  std::vector<NamedTensor> params_;
  std::vector<ConvLayer> layers_;
};

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);

  /// Applies one update from the accumulated gradients. Parameters without
  /// a gradient are left untouched.
  void step();
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamOptions opt_;
  std::uint64_t t_ = 0;
};

}  // namespace reko
