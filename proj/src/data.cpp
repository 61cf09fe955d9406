// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

namespace riformer {

Tensor Dataset::gather(std::span<const int> indices) const {
  const std::int64_t per = images.numel() / std::max<std::int64_t>(1, images.dim(0));
  Tensor out(Shape{static_cast<std::int64_t>(indices.size()), images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= size()) throw ShapeError("Dataset::gather: index out of range");
    std::copy_n(images.ptr() + indices[i] * per, per, out.ptr() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const int> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(labels.at(static_cast<std::size_t>(i)));
  return out;
}

void SynthSpec::validate() const {
  if (num_classes < 2 || num_classes > 10) throw ShapeError("data.num_classes must be in [2, 10] for synthetic data");
  if (samples_per_class < 1) throw ShapeError("data.samples_per_class must be >= 1");
  if (resolution < 16) throw ShapeError("data.resolution must be >= 16");
  if (!(noise >= 0.0f)) throw ShapeError("data.noise must be >= 0");
}

namespace {

struct Canvas {
  int res;
  std::vector<float> rgb;  // 3 planes

  float& at(int c, int y, int x) { return rgb[(static_cast<std::size_t>(c) * res + y) * res + x]; }
};

bool texture_on(int texture, int dx, int dy, int period, int phase) {
  const int half = std::max(1, period / 2);
  switch (texture) {
    case 0: return ((dy + phase) / half) % 2 == 0;
    case 1: return ((dx + phase) / half) % 2 == 0;
    case 2: return (((dx + phase) / half) + (dy / half)) % 2 == 0;
    case 3: return ((dx + dy + phase) / half) % 2 == 0;
    default: return ((dx + phase) % period) < half && (dy % period) < half;
  }
}

void paint_sample(Canvas& cv, int label, std::mt19937_64& rng, float noise) {
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  const int res = cv.res;
  const int texture = label / 2;
  const bool above = label % 2 == 1;

  float bg[3];
  const float gray = 0.4f + 0.2f * u01(rng);
  for (float& c : bg) c = gray + 0.05f * (u01(rng) - 0.5f);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) cv.at(c, y, x) = bg[c];
    }
  }

  const int side = res / 3;
  const int radius = std::max(2, res / 10);
  const int period = std::max(4, res / 8);
  const int gap = std::max(2, res / 16);
  // Along-axis extent of the pair and the room left for placing it.
  const int span = side + gap + 2 * radius;
  std::uniform_int_distribution<int> along(0, res - span);
  std::uniform_int_distribution<int> across(0, res - side);
  std::uniform_int_distribution<int> jitter(-side / 4, side / 4);
  std::uniform_int_distribution<int> extra(0, std::max(0, res / 8));
  const int a_along = along(rng);
  const int a_across = across(rng);
  const int b_along = std::min(res - 1 - radius, a_along + side + gap + radius + extra(rng));
  const int b_across = std::clamp(a_across + side / 2 + jitter(rng), radius, res - 1 - radius);
  const int ax = above ? a_across : a_along;
  const int ay = above ? a_along : a_across;
  const int bx = above ? b_across : b_along;
  const int by = above ? b_along : b_across;

  float c1[3], c2[3], cb[3];
  const float light = 0.8f + 0.15f * u01(rng);
  const float dark = 0.05f + 0.15f * u01(rng);
  for (int c = 0; c < 3; ++c) {
    c1[c] = light;
    c2[c] = dark;
  }
  cb[0] = 0.9f;
  cb[1] = 0.2f;
  cb[2] = 0.1f;
  const int phase = std::uniform_int_distribution<int>(0, period - 1)(rng);
  for (int y = ay; y < ay + side; ++y) {
    for (int x = ax; x < ax + side; ++x) {
      const float* col = texture_on(texture, x - ax, y - ay, period, phase) ? c1 : c2;
      for (int c = 0; c < 3; ++c) cv.at(c, y, x) = col[c];
    }
  }
  for (int y = by - radius; y <= by + radius; ++y) {
    for (int x = bx - radius; x <= bx + radius; ++x) {
      if (y < 0 || x < 0 || y >= res || x >= res) continue;
      if ((y - by) * (y - by) + (x - bx) * (x - bx) > radius * radius) continue;
      for (int c = 0; c < 3; ++c) cv.at(c, y, x) = cb[c];
    }
  }
  for (float& v : cv.rgb) v += noise * gauss(rng);
}

std::uint64_t split_seed(std::uint64_t seed, Split split) {
  return split == Split::train ? seed * 2 + 1 : seed * 2 + 2;
}

}  // namespace

RawImages synth_images(const SynthSpec& spec, Split split) {
  spec.validate();
  RawImages raw;
  raw.channels = 3;
  raw.resolution = spec.resolution;
  const std::size_t plane = static_cast<std::size_t>(spec.resolution) * spec.resolution;
  const int total = spec.num_classes * spec.samples_per_class;
  raw.pixels.reserve(static_cast<std::size_t>(total) * 3 * plane);
  std::mt19937_64 rng(split_seed(spec.seed, split));
  std::vector<int> order;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < spec.samples_per_class; ++i) order.push_back(c);
  }
  std::shuffle(order.begin(), order.end(), rng);
  Canvas cv{spec.resolution, std::vector<float>(3 * plane)};
  for (int label : order) {
    paint_sample(cv, label, rng, spec.noise);
    for (float v : cv.rgb) {
      raw.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
    raw.labels.push_back(label);
  }
  return raw;
}

Dataset to_dataset(const RawImages& raw, int num_classes, const Normalization& norm) {
  const std::int64_t n = static_cast<std::int64_t>(raw.labels.size());
  const std::int64_t plane = static_cast<std::int64_t>(raw.resolution) * raw.resolution;
  if (static_cast<std::int64_t>(raw.pixels.size()) != n * raw.channels * plane) {
    throw DataError("pixel buffer does not match label count");
  }
  if (raw.channels > 3) throw DataError("at most 3 channels are supported");
  Dataset d;
  d.num_classes = num_classes;
  d.labels = raw.labels;
  d.images = Tensor(Shape{n, raw.channels, raw.resolution, raw.resolution});
  auto out = d.images.data();
  for (std::int64_t i = 0; i < n; ++i) {
    if (raw.labels[i] < 0 || raw.labels[i] >= num_classes) throw DataError("label out of range");
    for (int c = 0; c < raw.channels; ++c) {
      const float inv = 1.0f / norm.stddev[c];
      const std::size_t off = static_cast<std::size_t>((i * raw.channels + c) * plane);
      for (std::int64_t p = 0; p < plane; ++p) {
        out[off + p] = (static_cast<float>(raw.pixels[off + p]) / 255.0f - norm.mean[c]) * inv;
      }
    }
  }
  return d;
}

Dataset synth_dataset(const SynthSpec& spec, Split split, const Normalization& norm) {
  return to_dataset(synth_images(spec, split), spec.num_classes, norm);
}

RawImages read_cifar10_records(const std::string& path, int resolution) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t record = 1 + 3 * static_cast<std::size_t>(resolution) * resolution;
  if (bytes.empty() || bytes.size() % record != 0) {
    throw DataError(path + ": length " + std::to_string(bytes.size()) + " is not a multiple of the " +
                    std::to_string(record) + "-byte record size");
  }
  RawImages raw;
  raw.channels = 3;
  raw.resolution = resolution;
  const std::size_t n = bytes.size() / record;
  raw.pixels.reserve(n * (record - 1));
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t label = bytes[i * record];
    if (label > 9) {
      throw DataError(path + ": record " + std::to_string(i) + " has label byte " + std::to_string(label));
    }
    raw.labels.push_back(label);
    raw.pixels.insert(raw.pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(i * record + 1),
                      bytes.begin() + static_cast<std::ptrdiff_t>((i + 1) * record));
  }
  return raw;
}

Dataset load_cifar10_binary(const std::vector<std::string>& paths, const Normalization& norm, int resolution) {
  if (paths.empty()) throw DataError("no CIFAR-10 files given");
  RawImages all;
  all.resolution = resolution;
  for (const auto& p : paths) {
    RawImages part = read_cifar10_records(p, resolution);
    all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
  }
  return to_dataset(all, 10, norm);
}

void write_cifar10_records(const std::string& path, const RawImages& raw) {
  if (raw.channels != 3) throw DataError("records need 3 channels");
  const std::size_t per = 3 * static_cast<std::size_t>(raw.resolution) * raw.resolution;
  if (raw.pixels.size() != per * raw.labels.size()) throw DataError("pixel buffer does not match label count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (std::size_t i = 0; i < raw.labels.size(); ++i) {
    if (raw.labels[i] < 0 || raw.labels[i] > 9) throw DataError("label does not fit the record format");
    const char label = static_cast<char>(raw.labels[i]);
    out.write(&label, 1);
    out.write(reinterpret_cast<const char*>(raw.pixels.data() + i * per), static_cast<std::streamsize>(per));
  }
  if (!out) throw DataError("write failed for " + path);
}

}  // namespace riformer
