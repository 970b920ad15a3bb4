#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "autosculpt/model/io.hpp"
#include "autosculpt/model/train.hpp"

namespace autosculpt {

struct Dataset {
  Split train;
  Split val;
  Split test;
  std::size_t classes = 0;
  Shape sample_shape;
};

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t samples = 2000;
  std::size_t classes = 4;
  std::size_t image = 16;
  std::size_t channels = 1;
  double sigma = 1.0;
  std::size_t grid = 0;  // templates drawn on a grid x grid lattice and upsampled; 0 = per pixel
};

namespace detail {

inline Split slice_split(const Tensor& images, const std::vector<int>& labels, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> rows;
  for (std::size_t i = begin; i < end; ++i) rows.push_back(i);
  return {take_rows(images, rows), std::vector<int>(labels.begin() + begin, labels.begin() + end)};
}

/// Standard normal values on a grid x grid lattice per channel, bilinearly
/// interpolated to image x image (lattice corners land on image corners).
inline void smooth_template(std::vector<double>& t, const SynthSpec& s, Rng& rng) {
  const std::size_t g = s.grid;
  if (g < 2) throw ValidationError("template grid must be 0 or at least 2");
  const std::size_t n = s.image;
  for (std::size_t c = 0; c < s.channels; ++c) {
    std::vector<double> lattice(g * g);
    for (double& v : lattice) v = rng.normal();
    for (std::size_t y = 0; y < n; ++y) {
      const double fy = n == 1 ? 0.0 : static_cast<double>(y) * static_cast<double>(g - 1) / static_cast<double>(n - 1);
      const std::size_t y0 = std::min(static_cast<std::size_t>(fy), g - 2);
      const double ty = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < n; ++x) {
        const double fx = n == 1 ? 0.0 : static_cast<double>(x) * static_cast<double>(g - 1) / static_cast<double>(n - 1);
        const std::size_t x0 = std::min(static_cast<std::size_t>(fx), g - 2);
        const double tx = fx - static_cast<double>(x0);
        const double top = lattice[y0 * g + x0] * (1.0 - tx) + lattice[y0 * g + x0 + 1] * tx;
        const double bot = lattice[(y0 + 1) * g + x0] * (1.0 - tx) + lattice[(y0 + 1) * g + x0 + 1] * tx;
        t[(c * n + y) * n + x] = top * (1.0 - ty) + bot * ty;
      }
    }
  }
}

}  // namespace detail

/// Sample i has label i mod classes and equals its class template plus
/// N(0, sigma^2) pixel noise. Templates are standard normal per pixel, or
/// smooth fields when `grid` is set. Split 80/10/10 by index.
inline Dataset synth_dataset(const SynthSpec& s) {
  if (s.classes < 2) throw ValidationError("synthetic dataset needs at least 2 classes");
  if (s.image == 0 || s.channels == 0) throw ValidationError("synthetic image size must be positive");
  if (s.samples < 10) throw ValidationError("synthetic dataset needs at least 10 samples");
  if (!(s.sigma >= 0.0)) throw ValidationError("noise sigma must be non-negative");
  const std::size_t pixels = s.channels * s.image * s.image;
  Rng template_rng(split_seed(s.seed, 0));
  std::vector<std::vector<double>> templates(s.classes, std::vector<double>(pixels));
  if (s.grid == 0) {
    for (auto& t : templates)
      for (double& v : t) v = template_rng.normal();
  } else {
    for (auto& t : templates) detail::smooth_template(t, s, template_rng);
  }
  Rng noise_rng(split_seed(s.seed, 1));
  Tensor images(Shape{s.samples, s.channels, s.image, s.image});
  std::vector<int> labels(s.samples);
  for (std::size_t i = 0; i < s.samples; ++i) {
    const std::size_t c = i % s.classes;
    labels[i] = static_cast<int>(c);
    for (std::size_t p = 0; p < pixels; ++p) images[i * pixels + p] = templates[c][p] + s.sigma * noise_rng.normal();
  }
  const std::size_t n_train = s.samples * 8 / 10;
  const std::size_t n_val = s.samples / 10;
  Dataset d;
  d.classes = s.classes;
  d.sample_shape = {s.channels, s.image, s.image};
  d.train = detail::slice_split(images, labels, 0, n_train);
  d.val = detail::slice_split(images, labels, n_train, n_train + n_val);
  d.test = detail::slice_split(images, labels, n_train + n_val, s.samples);
  return d;
}

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
// (1024 red, 1024 green, 1024 blue, each row-major 32x32).

inline constexpr std::size_t kCifarRecord = 3073;
inline constexpr std::size_t kCifarPixels = 3072;

struct CifarRecord {
  std::uint8_t label = 0;
  std::vector<std::uint8_t> pixels;
};

inline std::vector<CifarRecord> parse_cifar_batch(const std::string& bytes) {
  if (bytes.size() % kCifarRecord != 0) {
    throw ParseError("CIFAR batch size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  }
  std::vector<CifarRecord> out(bytes.size() / kCifarRecord);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data()) + r * kCifarRecord;
    if (p[0] > 9) throw ParseError("CIFAR record " + std::to_string(r) + " has label " + std::to_string(p[0]));
    out[r].label = p[0];
    out[r].pixels.assign(p + 1, p + kCifarRecord);
  }
  return out;
}

inline std::string serialize_cifar_record(const CifarRecord& r) {
  if (r.pixels.size() != kCifarPixels) throw ValidationError("CIFAR record needs 3072 pixels");
  std::string out(1, static_cast<char>(r.label));
  out.append(reinterpret_cast<const char*>(r.pixels.data()), r.pixels.size());
  return out;
}

/// Images [N,3,32,32] scaled to [0,1].
inline Split cifar_to_split(const std::vector<CifarRecord>& recs) {
  if (recs.empty()) throw ParseError("CIFAR batch has no records");
  Tensor images(Shape{recs.size(), 3, 32, 32});
  std::vector<int> labels;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    for (std::size_t p = 0; p < kCifarPixels; ++p) images[i * kCifarPixels + p] = recs[i].pixels[p] / 255.0;
    labels.push_back(recs[i].label);
  }
  return {std::move(images), std::move(labels)};
}

/// data_batch_1..5 form the training split; a seeded half of test_batch is
/// the validation split and the other half the test split.
inline Dataset load_cifar10(const std::filesystem::path& dir, std::uint64_t seed) {
  std::vector<CifarRecord> train;
  for (int b = 1; b <= 5; ++b) {
    const auto path = dir / ("data_batch_" + std::to_string(b) + ".bin");
    if (!std::filesystem::exists(path)) continue;
    auto recs = parse_cifar_batch(detail::read_file(path));
    train.insert(train.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  if (train.empty()) throw ParseError("no CIFAR-10 training batches in '" + dir.string() + "'");
  auto test = parse_cifar_batch(detail::read_file(dir / "test_batch.bin"));
  std::vector<std::size_t> order(test.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<CifarRecord> val, rest;
  for (std::size_t i = 0; i < order.size(); ++i) (i < order.size() / 2 ? val : rest).push_back(test[order[i]]);
  Dataset d;
  d.classes = 10;
  d.sample_shape = {3, 32, 32};
  d.train = cifar_to_split(train);
  d.val = cifar_to_split(val);
  d.test = cifar_to_split(rest);
  return d;
}

/// Reshape every split's samples to `shape` (same element count), e.g. to
/// read [1,16,16] images as 16 tokens of 16 features.
inline Dataset reshape_samples(Dataset d, const Shape& shape) {
  if (shape_numel(shape) != shape_numel(d.sample_shape)) {
    throw ShapeError("cannot view samples " + shape_str(d.sample_shape) + " as " + shape_str(shape));
  }
  for (Split* s : {&d.train, &d.val, &d.test}) {
    if (s->empty()) continue;
    Shape full{s->size()};
    full.insert(full.end(), shape.begin(), shape.end());
    s->images = s->images.reshaped(full);
  }
  d.sample_shape = shape;
  return d;
}

}  // namespace autosculpt
