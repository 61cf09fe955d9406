// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "riformer/model.hpp"

namespace riformer {

struct Grid {
  int h = 0;
  int w = 0;
  std::vector<double> values;  // row-major

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * w + j]; }
};

using FeatureFn = std::function<Tensor(Tape*, const Tensor&)>;

// |d(sum over channels of features[:, :, H/2, W/2]) / d input|, summed over
// channels and batch, scaled to a maximum of 1 (all zeros stay zero).
Grid erf_map(const FeatureFn& features, const Tensor& images);
// Uses the last stage output, before the final norm and head.
Grid erf_map(const Model& model, const Tensor& images);
int count_above(const Grid& grid, double threshold);
std::string grid_csv(const Grid& grid);

struct Histogram {
  std::vector<double> edges;  // bins + 1, increasing
  std::vector<std::uint64_t> counts;

  std::uint64_t total() const;
};

// `bins` equal-width bins over [lo, hi]; the top edge is inclusive.
Histogram make_histogram(std::span<const float> values, int bins, double lo, double hi);
// Range taken from the observed minimum and maximum.
Histogram make_histogram(std::span<const float> values, int bins);

// Output of stage 1..4 for the probe batch.
Tensor stage_output(const Model& model, const Tensor& images, int stage);
Histogram feature_histogram(const Model& model, const Tensor& images, int stage, int bins = 101,
                            std::optional<std::pair<double, double>> range = std::nullopt);

// 1-Wasserstein distance between the normalised histograms; edges must match.
double wasserstein1(const Histogram& a, const Histogram& b);
std::string histogram_csv(const Histogram& h);

struct AffineRow {
  int stage = 0;  // 1-based
  int block = 0;  // index inside the stage
  int channel = 0;
  float s = 0.0f;
  float t = 0.0f;
};

std::vector<AffineRow> dump_affine_coefficients(const Model& model);
std::string affine_csv(const std::vector<AffineRow>& rows);

}  // namespace riformer
