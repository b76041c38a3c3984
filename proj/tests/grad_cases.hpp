// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Every differentiable op and composite loss as a scalar function of one
// tensor, plus a sampler for the point at which to check it.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <random>
#include <string>
#include <vector>

#include "reko/attention.hpp"
#include "reko/grad_check.hpp"
#include "reko/losses.hpp"
#include "reko/models.hpp"
#include "test_util.hpp"

namespace gradcases {

using namespace reko;
using testutil::away_from_zero;
using testutil::uniform;
using testutil::weighted_sum;

struct Case {
  std::string name;
  std::function<Tensor(std::mt19937_64&)> point;
  // Builds the scalar function; fixed operands are drawn from the rng once
  // per point.
  std::function<ScalarFn(std::mt19937_64&)> make;
};

// True when central differences at steps h and h/4 agree for every
// coordinate, i.e. no kink of f lies inside the finite-difference stencil.
// Uses forward evaluations only.
inline bool smooth_near(const ScalarFn& f, const Tensor& point, double h) {
  std::vector<double> v(point.data().begin(), point.data().end());
  auto at = [&](std::size_t i, double dx) {
    const double x0 = v[i];
    v[i] = x0 + dx;
    const double out = f(Tensor::from_data(point.shape(), v)).item();
    v[i] = x0;
    return out;
  };
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double coarse = (at(i, h) - at(i, -h)) / (2 * h);
    const double fine = (at(i, h / 4) - at(i, -h / 4)) / (h / 2);
    if (std::abs(coarse - fine) > 1e-4 * std::max(1.0, std::abs(fine))) {
      return false;
    }
  }
  return true;
}

struct Sampled {
  Tensor point;
  ScalarFn f;
  int rejected = 0;
};

// Draws (point, f) pairs until the stencil around the point is kink-free.
inline Sampled sample(const Case& c, std::mt19937_64& rng, double h = 1e-3) {
  Sampled s;
  for (int attempt = 0; attempt < 50; ++attempt) {
    s.point = c.point(rng);
    s.f = c.make(rng);
    if (smooth_near(s.f, s.point, h)) return s;
    ++s.rejected;
  }
  throw std::runtime_error(c.name + ": no kink-free point in 50 draws");
}

inline FeatureMap fmap(const Tensor& values, std::size_t h, std::size_t w) {
  return FeatureMap{values.dim(0), h, w, values};
}

inline std::vector<Case> all_cases() {
  std::vector<Case> cs;
  auto pt = [](Shape s, double lo = -1.0, double hi = 1.0) {
    return [s, lo, hi](std::mt19937_64& r) { return uniform(s, r, lo, hi); };
  };
  auto kinked = [](Shape s) {
    return [s](std::mt19937_64& r) { return away_from_zero(s, r); };
  };
  // Wraps an elementwise/structural op g(x) with a random weighting.
  auto wrap = [](Shape out_shape, std::function<Tensor(const Tensor&)> g) {
    return [out_shape, g](std::mt19937_64& r) -> ScalarFn {
      const Tensor w = uniform(out_shape, r);
      return [g, w](const Tensor& x) { return weighted_sum(g(x), w); };
    };
  };
  auto with_operand = [](Shape op_shape, Shape out_shape,
                         std::function<Tensor(const Tensor&, const Tensor&)> g) {
    return [op_shape, out_shape, g](std::mt19937_64& r) -> ScalarFn {
      const Tensor a = uniform(op_shape, r);
      const Tensor w = uniform(out_shape, r);
      return [g, a, w](const Tensor& x) { return weighted_sum(g(x, a), w); };
    };
  };

  const Shape s{3, 4};
  cs.push_back({"add", pt(s), with_operand(s, s, [](auto& x, auto& a) { return add(x, a); })});
  cs.push_back({"add_self", pt(s), wrap(s, [](auto& x) { return add(x, x); })});
  cs.push_back({"sub", pt(s), with_operand(s, s, [](auto& x, auto& a) { return sub(a, x); })});
  cs.push_back({"mul", pt(s), with_operand(s, s, [](auto& x, auto& a) { return mul(x, a); })});
  cs.push_back({"mul_self", pt(s), wrap(s, [](auto& x) { return mul(x, x); })});
  cs.push_back({"scale", pt(s), wrap(s, [](auto& x) { return scale(x, -1.7); })});
  cs.push_back({"add_scalar", pt(s), wrap(s, [](auto& x) { return add_scalar(x, 0.3); })});
  cs.push_back({"leaky_relu", kinked(s), wrap(s, [](auto& x) { return leaky_relu(x); })});
  cs.push_back({"relu", kinked(s), wrap(s, [](auto& x) { return relu(x); })});
  cs.push_back({"abs", kinked(s), wrap(s, [](auto& x) { return reko::abs(x); })});
  cs.push_back({"tanh", pt(s, -2, 2), wrap(s, [](auto& x) { return reko::tanh(x); })});
  cs.push_back({"exp", pt(s), wrap(s, [](auto& x) { return reko::exp(x); })});
  cs.push_back({"log", pt(s, 0.5, 2.0), wrap(s, [](auto& x) { return reko::log(x); })});
  cs.push_back({"square", pt(s), wrap(s, [](auto& x) { return square(x); })});

  const Shape s3{3, 4, 2};
  cs.push_back({"sum", pt(s3), [](std::mt19937_64&) -> ScalarFn {
                  return [](const Tensor& x) { return sum(x); };
                }});
  cs.push_back({"mean", pt(s3), [](std::mt19937_64&) -> ScalarFn {
                  return [](const Tensor& x) { return mean(square(x)); };
                }});
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Shape out = s3;
    out.erase(out.begin() + static_cast<long>(axis));
    cs.push_back({"sum_axis" + std::to_string(axis), pt(s3),
                  wrap(out, [axis](auto& x) { return sum(x, axis); })});
    cs.push_back({"mean_axis" + std::to_string(axis), pt(s3),
                  wrap(out, [axis](auto& x) { return mean(x, axis); })});
  }
  cs.push_back({"logsumexp_axis0", pt(s, -3, 3), wrap({4}, [](auto& x) { return logsumexp(x, 0); })});
  cs.push_back({"logsumexp_axis1", pt(s, -3, 3), wrap({3}, [](auto& x) { return logsumexp(x, 1); })});
  cs.push_back({"l2_normalize_axis0", pt(s), wrap(s, [](auto& x) { return l2_normalize(x, 0); })});
  cs.push_back({"l2_normalize_axis1", pt(s), wrap(s, [](auto& x) { return l2_normalize(x, 1); })});
  cs.push_back({"reshape", pt(s), wrap({2, 6}, [](auto& x) { return reshape(x, {2, 6}); })});
  cs.push_back({"transpose", pt(s), wrap({4, 3}, [](auto& x) { return transpose(x); })});
  cs.push_back({"select", pt(s3), wrap({4, 2}, [](auto& x) { return select(x, 1); })});
  cs.push_back({"concat", pt(s), with_operand({3, 2}, {3, 6}, [](auto& x, auto& a) {
                  const std::vector<Tensor> parts{a, x};
                  return concat(parts, 1);
                })});
  cs.push_back({"gather_columns", pt(s), wrap({3, 4}, [](auto& x) {
                  const std::vector<std::size_t> cols{2, 0, 2, 3};
                  return gather_columns(x, cols);
                })});
  cs.push_back({"stack", pt(s), with_operand(s, {2, 3, 4}, [](auto& x, auto& a) {
                  const std::vector<Tensor> parts{x, a};
                  return stack(parts);
                })});
  cs.push_back({"matmul_left", pt(s), with_operand({4, 5}, {3, 5}, [](auto& x, auto& a) { return matmul(x, a); })});
  cs.push_back({"matmul_right", pt(s), with_operand({2, 3}, {2, 4}, [](auto& x, auto& a) { return matmul(a, x); })});

  const ConvParams down{2, 1, 0};
  const ConvParams up{2, 1, 1};
  cs.push_back({"conv2d_input", pt({1, 2, 5, 5}), [down](std::mt19937_64& r) -> ScalarFn {
                  const Tensor w = uniform({3, 2, 3, 3}, r);
                  const Tensor b = uniform({3}, r);
                  const Tensor g = uniform({1, 3, 3, 3}, r);
                  return [=](const Tensor& x) { return weighted_sum(conv2d(x, w, b, down), g); };
                }});
  cs.push_back({"conv2d_weight", pt({3, 2, 3, 3}), [down](std::mt19937_64& r) -> ScalarFn {
                  const Tensor x = uniform({2, 2, 5, 5}, r);
                  const Tensor g = uniform({2, 3, 3, 3}, r);
                  return [=](const Tensor& w) { return weighted_sum(conv2d(x, w, Tensor(), down), g); };
                }});
  cs.push_back({"conv2d_bias", pt({3}), [](std::mt19937_64& r) -> ScalarFn {
                  const Tensor x = uniform({1, 2, 4, 4}, r);
                  const Tensor w = uniform({3, 2, 3, 3}, r);
                  const Tensor g = uniform({1, 3, 4, 4}, r);
                  return [=](const Tensor& b) { return weighted_sum(conv2d(x, w, b, ConvParams{1, 1, 0}), g); };
                }});
  cs.push_back({"conv_transpose2d_input", pt({1, 2, 3, 3}), [up](std::mt19937_64& r) -> ScalarFn {
                  const Tensor w = uniform({2, 3, 3, 3}, r);
                  const Tensor b = uniform({3}, r);
                  const Tensor g = uniform({1, 3, 6, 6}, r);
                  return [=](const Tensor& x) { return weighted_sum(conv_transpose2d(x, w, b, up), g); };
                }});
  cs.push_back({"conv_transpose2d_weight", pt({2, 3, 3, 3}), [up](std::mt19937_64& r) -> ScalarFn {
                  const Tensor x = uniform({2, 2, 3, 3}, r);
                  const Tensor g = uniform({2, 3, 6, 6}, r);
                  return [=](const Tensor& w) { return weighted_sum(conv_transpose2d(x, w, Tensor(), up), g); };
                }});
  cs.push_back({"conv_transpose2d_bias", pt({3}), [up](std::mt19937_64& r) -> ScalarFn {
                  const Tensor x = uniform({1, 2, 3, 3}, r);
                  const Tensor w = uniform({2, 3, 3, 3}, r);
                  const Tensor g = uniform({1, 3, 6, 6}, r);
                  return [=](const Tensor& b) { return weighted_sum(conv_transpose2d(x, w, b, up), g); };
                }});

  // ---- losses ----
  const std::size_t d = 5, m = 6;
  cs.push_back({"info_nce_query", pt({d}), [](std::mt19937_64& r) -> ScalarFn {
                  const Tensor pos = uniform({5}, r);
                  const Tensor negs = uniform({5, 3}, r);
                  return [=](const Tensor& q) { return info_nce(q, pos, negs, 0.5); };
                }});
  cs.push_back({"info_nce_keys", pt({d, 3}), [](std::mt19937_64& r) -> ScalarFn {
                  const Tensor q = uniform({5}, r);
                  const Tensor pos = uniform({5}, r);
                  return [=](const Tensor& negs) { return info_nce(q, pos, negs, 0.3); };
                }});
  for (bool normalize : {true, false}) {
    const std::string tag = normalize ? "_norm" : "_raw";
    cs.push_back({"project" + tag, pt({4, m}), [=](std::mt19937_64& r) -> ScalarFn {
                    const auto head = ProjectionHead::from_weight(uniform({d, 4}, r));
                    const Tensor g = uniform({d, m}, r);
                    return [=](const Tensor& f) { return weighted_sum(project(head, f, normalize), g); };
                  }});
    const double tau = normalize ? 0.5 : 1.0;
    cs.push_back({"region_dis" + tag, pt({4, m}), [=](std::mt19937_64& r) -> ScalarFn {
                    const auto heads = HeadPair::make(4, 3, d, r());
                    const FeatureMap ft = fmap(uniform({3, m}, r), 2, 3);
                    DistillConfig cfg;
                    cfg.tau = tau;
                    cfg.normalize_embeddings = normalize;
                    return [=](const Tensor& f) { return region_dis(fmap(f, 2, 3), ft, heads, cfg); };
                  }});
    cs.push_back({"region_dis_teacher" + tag, pt({3, m}), [=](std::mt19937_64& r) -> ScalarFn {
                    const auto heads = HeadPair::make(4, 3, d, r());
                    const FeatureMap fs = fmap(uniform({4, m}, r), 2, 3);
                    DistillConfig cfg;
                    cfg.tau = tau;
                    cfg.normalize_embeddings = normalize;
                    return [=](const Tensor& f) { return region_dis(fs, fmap(f, 2, 3), heads, cfg); };
                  }});
    cs.push_back({"reko_loss" + tag, pt({4, m}), [=](std::mt19937_64& r) -> ScalarFn {
                    const auto heads = HeadPair::make(4, 3, d, r());
                    const FeatureMap ft = fmap(uniform({3, m}, r), 2, 3);
                    const RegionSet regions = top_k_regions(attention_map(ft), 3);
                    DistillConfig cfg;
                    cfg.tau = tau;
                    cfg.normalize_embeddings = normalize;
                    return [=](const Tensor& f) { return reko_loss(fmap(f, 2, 3), ft, regions, heads, cfg); };
                  }});
    cs.push_back({"l2_regions" + tag, pt({4, m}), [=](std::mt19937_64& r) -> ScalarFn {
                    const auto heads = HeadPair::make(4, 3, d, r());
                    const FeatureMap ft = fmap(uniform({3, m}, r), 2, 3);
                    const RegionSet regions = top_k_regions(attention_map(ft), 3);
                    return [=](const Tensor& f) { return l2_regions(fmap(f, 2, 3), ft, regions, heads, normalize); };
                  }});
  }
  cs.push_back({"hinton_l1",
                [](std::mt19937_64& r) { return away_from_zero({1, 3, 4, 4}, r); },
                [](std::mt19937_64&) -> ScalarFn {
                  const Tensor t = Tensor::zeros({1, 3, 4, 4});
                  return [=](const Tensor& s) { return hinton_l1(s, t); };
                }});
  cs.push_back({"attention_transfer", kinked({4, m}), [](std::mt19937_64& r) -> ScalarFn {
                  const FeatureMap ft = fmap(uniform({3, m}, r), 2, 3);
                  return [=](const Tensor& f) { return attention_transfer(fmap(f, 2, 3), ft); };
                }});
  cs.push_back({"attention_map", kinked({4, m}), wrap({m}, [](auto& f) {
                  return attention_map(fmap(f, 2, 3)).values;
                })});

  // Complete student objective: L1 reconstruction + LSGAN generator term
  // + α·ReKo, differentiated end to end with respect to the input image.
  cs.push_back({"full_objective", pt({1, 3, 8, 8}), [](std::mt19937_64& r) -> ScalarFn {
                  const GeneratorSpec spec{.base_width = 2, .depth = 1, .image_size = 8,
                                           .channels = 3, .res_blocks = 1};
                  const Generator student(spec, r());
                  DiscriminatorSpec dspec;
                  dspec.base_width = 2;
                  dspec.layers = 1;
                  const Discriminator disc(dspec, r());
                  const auto heads = HeadPair::make(spec.bottleneck_channels(), 4, 6, r());
                  const Tensor ft_values = uniform({4, 16}, r);
                  std::vector<FeatureMap> ft{fmap(ft_values, 4, 4)};
                  std::bernoulli_distribution sign(0.5);
                  std::vector<double> y(3 * 8 * 8);
                  for (double& v : y) v = sign(r) ? 1.5 : -1.5;
                  const Tensor target = Tensor::from_data({1, 3, 8, 8}, y);
                  DistillConfig cfg;
                  cfg.alpha = 0.7;
                  cfg.k = 4;
                  cfg.tau = 0.5;
                  cfg.embed_dim = 6;
                  return [=](const Tensor& x) {
                    const auto out = student.forward(x);
                    std::vector<FeatureMap> fs{FeatureMap::from_batch(out.bottleneck, 0)};
                    const Tensor origin = add(mean(reko::abs(sub(out.image, target))),
                                              scale(disc.generator_loss(out.image), 0.1));
                    const Tensor distill = distillation_loss(fs, ft, out.image, out.image.detach(),
                                                             heads, cfg);
                    return add(origin, scale(distill, cfg.alpha));
                  };
                }});
  return cs;
}

}  // namespace gradcases
