// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#include "reko/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "reko/random.hpp"
#include "reko/serialize.hpp"

namespace reko {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kChannels = 3;
constexpr std::uint32_t kSampleVersion = 1;
constexpr std::array<char, 4> kSampleMagic{'R', 'K', 'S', 'M'};
constexpr std::array<char, 4> kMaskMagic{'R', 'K', 'M', 'K'};
constexpr double kStripeLevel = 0.85;
constexpr double kNoise = 0.04;
constexpr int kMaxAttempts = 10000;

struct Ellipse {
  double cx, cy;   // centre, pixels
  double major;    // semi-axes, pixels
  double minor;
  int orientation;  // multiples of 45°

  bool contains(double x, double y) const {
    const double phi = orientation * std::numbers::pi / 4.0;
    const double dx = x - cx;
    const double dy = y - cy;
    const double u = dx * std::cos(phi) + dy * std::sin(phi);
    const double v = -dx * std::sin(phi) + dy * std::cos(phi);
    return (u * u) / (major * major) + (v * v) / (minor * minor) <= 1.0;
  }
};

// Stripes run across the major axis with a period of `period` pixels
// along both image axes.
bool stripe_on(int orientation, std::size_t x, std::size_t y,
               std::size_t period, std::size_t size) {
  const std::size_t half = period / 2;
  std::size_t coord = 0;
  switch (orientation) {
    case 0: coord = x; break;
    case 1: coord = x + y; break;
    case 2: coord = y; break;
    default: coord = x + size - y; break;
  }
  return (coord / half) % 2 == 0;
}

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const fs::path& path) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw IoError(path.string() + ": truncated sample file");
  return value;
}

std::string sample_name(std::size_t index) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << index << ".rksm";
  return os.str();
}

}  // namespace

double Sample::mask_fraction() const {
  std::size_t on = 0;
  for (auto m : mask) on += m;
  return static_cast<double>(on) / static_cast<double>(mask.size());
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index) {
  return derive_seed(dataset_seed, static_cast<std::uint64_t>(index));
}

Sample generate_sample(std::uint64_t seed, const SynthOptions& options) {
  const std::size_t n = options.image_size;
  if (n < 16 || options.stripe_period < 2 || options.stripe_period % 2) {
    throw std::invalid_argument("generate_sample: unsupported options");
  }
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double scale = static_cast<double>(n);

  // Smooth background: a per-channel plane.
  std::array<double, kChannels> base{}, gx{}, gy{};
  for (std::size_t c = 0; c < kChannels; ++c) {
    base[c] = uniform(-0.5, 0.5);
    gx[c] = uniform(-0.3, 0.3);
    gy[c] = uniform(-0.3, 0.3);
  }
  auto background = [&](std::size_t c, std::size_t x, std::size_t y) {
    const double u = 2.0 * static_cast<double>(x) / (scale - 1.0) - 1.0;
    const double v = 2.0 * static_cast<double>(y) / (scale - 1.0) - 1.0;
    return base[c] + gx[c] * u + gy[c] * v;
  };

  // Rejection-sample the objects until the mask area lands in the band.
  std::vector<Ellipse> objects;
  std::vector<int> owner(n * n, -1);
  std::vector<std::uint8_t> mask(n * n, 0);
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxAttempts) {
      throw std::runtime_error("generate_sample: mask band unreachable");
    }
    objects.clear();
    const int count = 1 + static_cast<int>(unit(rng) * 3.0);
    for (int i = 0; i < count; ++i) {
      const double major = uniform(0.14, 0.26) * scale;
      objects.push_back(Ellipse{uniform(0.22, 0.78) * scale,
                                uniform(0.22, 0.78) * scale, major,
                                major * uniform(0.3, 0.45),
                                static_cast<int>(unit(rng) * 4.0) % 4});
    }
    std::size_t area = 0;
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        int who = -1;
        for (std::size_t e = 0; e < objects.size(); ++e) {
          if (objects[e].contains(static_cast<double>(x) + 0.5,
                                  static_cast<double>(y) + 0.5)) {
            who = static_cast<int>(e);
          }
        }
        owner[y * n + x] = who;
        mask[y * n + x] = who >= 0 ? 1 : 0;
        area += who >= 0 ? 1 : 0;
      }
    }
    const double fraction = static_cast<double>(area) / (scale * scale);
    if (fraction >= options.min_mask_fraction &&
        fraction <= options.max_mask_fraction) {
      break;
    }
  }

  // Object fill colours, kept well away from the local background.
  std::vector<std::array<double, kChannels>> fill(objects.size());
  for (std::size_t e = 0; e < objects.size(); ++e) {
    const auto cx = static_cast<std::size_t>(objects[e].cx);
    const auto cy = static_cast<std::size_t>(objects[e].cy);
    do {
      double diff = 0.0;
      for (std::size_t c = 0; c < kChannels; ++c) {
        fill[e][c] = uniform(-0.9, 0.9);
        diff += std::abs(fill[e][c] - background(c, cx, cy));
      }
      if (diff / kChannels > 0.4) break;
    } while (true);
  }

  std::vector<double> input(kChannels * n * n);
  std::vector<double> target(kChannels * n * n);
  for (std::size_t c = 0; c < kChannels; ++c) {
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const std::size_t p = y * n + x;
        const int who = owner[p];
        const double clean = who >= 0 ? fill[static_cast<std::size_t>(who)][c]
                                      : background(c, x, y);
        const double value =
            std::clamp(clean + uniform(-kNoise, kNoise), -1.0, 1.0);
        input[c * n * n + p] = value;
        if (who < 0) {
          target[c * n * n + p] = value;
        } else {
          const bool on = stripe_on(objects[static_cast<std::size_t>(who)]
                                        .orientation,
                                    x, y, options.stripe_period, n);
          target[c * n * n + p] = on ? kStripeLevel : -kStripeLevel;
        }
      }
    }
  }

  return Sample{Tensor::from_data({kChannels, n, n}, std::move(input)),
                Tensor::from_data({kChannels, n, n}, std::move(target)),
                std::move(mask), seed};
}

void write_sample(const fs::path& path, const Sample& s) {
  std::ostringstream os;
  os.write(kSampleMagic.data(), kSampleMagic.size());
  put<std::uint32_t>(os, kSampleVersion);
  write_tensor(os, s.input);
  write_tensor(os, s.target);
  os.write(kMaskMagic.data(), kMaskMagic.size());
  put<std::uint32_t>(os, 2);
  put<std::uint64_t>(os, s.size());
  put<std::uint64_t>(os, s.size());
  os.write(reinterpret_cast<const char*>(s.mask.data()),
           static_cast<std::streamsize>(s.mask.size()));
  put<std::uint64_t>(os, s.seed);
  write_file_atomic(path, os.str());
}

Sample read_sample(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kSampleMagic) {
    throw IoError(path.string() + ": not a sample file");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kSampleVersion) {
    throw IoError(path.string() + ": unsupported sample version " +
                  std::to_string(version));
  }
  Sample s;
  try {
    s.input = read_tensor(is);
    s.target = read_tensor(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  is.read(magic.data(), magic.size());
  if (!is || magic != kMaskMagic) throw IoError(path.string() + ": bad mask");
  if (get<std::uint32_t>(is, path) != 2) {
    throw IoError(path.string() + ": mask must be rank 2");
  }
  const auto h = get<std::uint64_t>(is, path);
  const auto w = get<std::uint64_t>(is, path);
  if (s.input.rank() != 3 || h != s.input.dim(1) || w != s.input.dim(2) ||
      s.target.shape() != s.input.shape()) {
    throw IoError(path.string() + ": inconsistent sample shapes");
  }
  s.mask.resize(h * w);
  is.read(reinterpret_cast<char*>(s.mask.data()),
          static_cast<std::streamsize>(s.mask.size()));
  s.seed = get<std::uint64_t>(is, path);
  return s;
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json files_json = nlohmann::json::array();
  for (std::size_t i = 0; i < files.size(); ++i) {
    files_json.push_back({{"file", files[i]}, {"sha256", checksums[i]}});
  }
  return {{"format", "RKSM-dataset"},
          {"format_version", format_version},
          {"seed", seed},
          {"n_train", n_train},
          {"n_eval", n_eval},
          {"options",
           {{"image_size", options.image_size},
            {"min_mask_fraction", options.min_mask_fraction},
            {"max_mask_fraction", options.max_mask_fraction},
            {"stripe_period", options.stripe_period}}},
          {"files", files_json}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "RKSM-dataset") {
    throw IoError("not a dataset manifest");
  }
  DatasetManifest m;
  m.format_version = j.at("format_version").get<std::uint32_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.n_train = j.at("n_train").get<std::size_t>();
  m.n_eval = j.at("n_eval").get<std::size_t>();
  const auto& o = j.at("options");
  m.options.image_size = o.at("image_size").get<std::size_t>();
  m.options.min_mask_fraction = o.at("min_mask_fraction").get<double>();
  m.options.max_mask_fraction = o.at("max_mask_fraction").get<double>();
  m.options.stripe_period = o.at("stripe_period").get<std::size_t>();
  for (const auto& f : j.at("files")) {
    m.files.push_back(f.at("file").get<std::string>());
    m.checksums.push_back(f.at("sha256").get<std::string>());
  }
  if (m.files.size() != m.sample_count()) {
    throw IoError("dataset manifest lists " + std::to_string(m.files.size()) +
                  " files for " + std::to_string(m.sample_count()) +
                  " samples");
  }
  return m;
}

DatasetManifest generate_dataset(std::uint64_t seed, std::size_t n_train,
                                 std::size_t n_eval, const fs::path& out_dir,
                                 const SynthOptions& options) {
  DatasetManifest m;
  m.seed = seed;
  m.n_train = n_train;
  m.n_eval = n_eval;
  m.options = options;
  for (std::size_t i = 0; i < n_train + n_eval; ++i) {
    const bool train = i < n_train;
    const std::string rel = std::string(train ? "train/" : "eval/") +
                            sample_name(train ? i : i - n_train);
    write_sample(out_dir / rel, generate_sample(sample_seed(seed, i), options));
    m.files.push_back(rel);
    m.checksums.push_back(sha256_file(out_dir / rel));
  }
  write_file_atomic(out_dir / "manifest.json", m.to_json().dump(2) + "\n");
  return m;
}

Dataset Dataset::generate(std::uint64_t seed, std::size_t n_train,
                          std::size_t n_eval, const SynthOptions& options) {
  Dataset d;
  for (std::size_t i = 0; i < n_train + n_eval; ++i) {
    auto s = generate_sample(sample_seed(seed, i), options);
    (i < n_train ? d.train : d.eval).push_back(std::move(s));
  }
  return d;
}

Dataset Dataset::load(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  DatasetManifest m;
  try {
    m = DatasetManifest::from_json(
        nlohmann::json::parse(read_file(manifest_path)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  Dataset d;
  for (std::size_t i = 0; i < m.files.size(); ++i) {
    const fs::path file = dir / m.files[i];
    if (sha256_file(file) != m.checksums[i]) {
      throw IoError(file.string() + ": checksum mismatch");
    }
    (i < m.n_train ? d.train : d.eval).push_back(read_sample(file));
  }
  return d;
}

namespace {

Tensor stack_images(const std::vector<Sample>& samples,
                    std::span<const std::size_t> indices, bool target) {
  if (indices.empty()) throw TensorError("batch: no samples selected");
  const Shape& one = samples.at(indices[0]).input.shape();
  const std::size_t per = shape_numel(one);
  std::vector<double> data(per * indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Sample& s = samples.at(indices[b]);
    const auto src = target ? s.target.data() : s.input.data();
    if (src.size() != per) throw TensorError("batch: ragged sample shapes");
    std::copy(src.begin(), src.end(), data.begin() + static_cast<long>(b * per));
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), one.begin(), one.end());
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

Tensor batch_inputs(const std::vector<Sample>& samples,
                    std::span<const std::size_t> indices) {
  return stack_images(samples, indices, false);
}

Tensor batch_targets(const std::vector<Sample>& samples,
                     std::span<const std::size_t> indices) {
  return stack_images(samples, indices, true);
}

}  // namespace reko
