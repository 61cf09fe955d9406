// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "riformer/tensor.hpp"

namespace riformer {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor images;  // (N, C, H, W), normalized
  std::vector<int> labels;
  int num_classes = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  Tensor gather(std::span<const int> indices) const;
  std::vector<int> gather_labels(std::span<const int> indices) const;
};

// 8-bit images in channel-plane order, as stored on disk.
struct RawImages {
  int channels = 3;
  int resolution = 32;
  std::vector<std::uint8_t> pixels;  // N * channels * resolution^2
  std::vector<int> labels;
};

struct Normalization {
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> stddev{0.25f, 0.25f, 0.25f};
};

enum class Split { train, val };

// Class c has texture c / 2 on the patterned object and layout c % 2: the
// patterned object left of a plain disk, or above it. Positions, colours,
// texture phase and background noise vary per sample.
struct SynthSpec {
  std::uint64_t seed = 0;
  int num_classes = 10;
  int samples_per_class = 60;
  int resolution = 64;
  float noise = 0.08f;

  void validate() const;
};

RawImages synth_images(const SynthSpec& spec, Split split);
Dataset synth_dataset(const SynthSpec& spec, Split split, const Normalization& norm = {});

Dataset to_dataset(const RawImages& raw, int num_classes, const Normalization& norm);

// Records of 1 label byte followed by channels * resolution^2 pixel bytes
// (R, G, B planes, row-major). The standard files use 32x32.
RawImages read_cifar10_records(const std::string& path, int resolution = 32);
Dataset load_cifar10_binary(const std::vector<std::string>& paths, const Normalization& norm = {},
                            int resolution = 32);
void write_cifar10_records(const std::string& path, const RawImages& raw);

}  // namespace riformer
