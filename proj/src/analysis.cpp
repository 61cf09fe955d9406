// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "riformer/ops.hpp"

namespace riformer {

Grid erf_map(const FeatureFn& features, const Tensor& images) {
  require_rank(images, 4, "erf_map");
  if (images.dim(0) == 0) throw ShapeError("erf_map: empty probe batch");
  Tensor x = images.clone();
  x.set_requires_grad(true);
  Tape tape;
  const Tensor f = features(&tape, x);
  require_rank(f, 4, "erf_map features");
  const Tensor target = ops::spatial_point_sum(&tape, f, f.dim(2) / 2, f.dim(3) / 2);
  if (target.producer() != tape.generation()) throw ShapeError("erf_map: features do not depend on the input");
  tape.backward(target);
  Grid g;
  g.h = static_cast<int>(x.dim(2));
  g.w = static_cast<int>(x.dim(3));
  g.values.assign(static_cast<std::size_t>(g.h) * g.w, 0.0);
  const auto grad = x.grad();
  const std::size_t plane = g.values.size();
  for (std::size_t p = 0; p < static_cast<std::size_t>(x.dim(0) * x.dim(1)); ++p) {
    for (std::size_t i = 0; i < plane; ++i) g.values[i] += std::fabs(grad[p * plane + i]);
  }
  const double mx = *std::max_element(g.values.begin(), g.values.end());
  if (mx > 0.0) {
    for (double& v : g.values) v /= mx;
  }
  return g;
}

Grid erf_map(const Model& model, const Tensor& images) {
  return erf_map(
      [&model](Tape* tape, const Tensor& x) {
        ForwardOptions o;
        o.tape = tape;
        return forward_features(model, x, o);
      },
      images);
}

int count_above(const Grid& grid, double threshold) {
  return static_cast<int>(std::count_if(grid.values.begin(), grid.values.end(), [&](double v) { return v > threshold; }));
}

std::string grid_csv(const Grid& grid) {
  std::ostringstream os;
  os.precision(9);
  for (int i = 0; i < grid.h; ++i) {
    for (int j = 0; j < grid.w; ++j) os << (j ? "," : "") << grid.at(i, j);
    os << '\n';
  }
  return os.str();
}

std::uint64_t Histogram::total() const {
  std::uint64_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

Histogram make_histogram(std::span<const float> values, int bins, double lo, double hi) {
  if (bins < 1) throw ShapeError("histogram: bins must be >= 1");
  if (!(hi >= lo)) throw ShapeError("histogram: empty range");
  Histogram h;
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  for (int i = 0; i <= bins; ++i) h.edges.push_back(i == bins ? hi : lo + width * i);
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (float v : values) {
    if (!std::isfinite(v)) throw NumericError("histogram: non-finite value");
    if (v < lo || v > hi) continue;
    const int b = std::min(bins - 1, static_cast<int>((v - lo) / width));
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

Histogram make_histogram(std::span<const float> values, int bins) {
  if (values.empty()) throw ShapeError("histogram: empty probe set");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  return make_histogram(values, bins, *mn, *mx);
}

Tensor stage_output(const Model& model, const Tensor& images, int stage) {
  if (stage < 1 || stage > static_cast<int>(model.spec.stages.size())) {
    throw ShapeError("stage must be in [1, " + std::to_string(model.spec.stages.size()) + "]");
  }
  if (images.dim(0) == 0) throw ShapeError("empty probe set");
  ForwardOptions o;
  o.capture_stages = true;
  const ForwardResult r = forward(model, images, o);
  return r.stages.at(static_cast<std::size_t>(stage - 1));
}

Histogram feature_histogram(const Model& model, const Tensor& images, int stage, int bins,
                            std::optional<std::pair<double, double>> range) {
  const Tensor f = stage_output(model, images, stage);
  if (range) return make_histogram(f.data(), bins, range->first, range->second);
  return make_histogram(f.data(), bins);
}

double wasserstein1(const Histogram& a, const Histogram& b) {
  if (a.edges != b.edges) throw ShapeError("wasserstein1: histograms use different bins");
  const double na = static_cast<double>(a.total());
  const double nb = static_cast<double>(b.total());
  if (na == 0.0 || nb == 0.0) throw ShapeError("wasserstein1: empty histogram");
  double ca = 0.0, cb = 0.0, w = 0.0;
  for (std::size_t i = 0; i < a.counts.size(); ++i) {
    ca += static_cast<double>(a.counts[i]) / na;
    cb += static_cast<double>(b.counts[i]) / nb;
    w += std::fabs(ca - cb) * (a.edges[i + 1] - a.edges[i]);
  }
  return w;
}

std::string histogram_csv(const Histogram& h) {
  std::ostringstream os;
  os.precision(9);
  os << "bin_left,bin_right,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) os << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
  return os.str();
}

std::vector<AffineRow> dump_affine_coefficients(const Model& model) {
  if (model.spec.mixer != MixerKind::affine) throw ShapeError("dump-affine: model does not use the affine mixer");
  if (model.deployed) throw ShapeError("dump-affine: coefficients were absorbed by fusion");
  std::vector<AffineRow> rows;
  int prev_stage = -1;
  int in_stage = 0;
  for (const auto& b : model.blocks) {
    in_stage = b.stage == prev_stage ? in_stage + 1 : 0;
    prev_stage = b.stage;
    for (int c = 0; c < b.dim; ++c) {
      rows.push_back(AffineRow{b.stage + 1, in_stage, c, b.s.data()[c], b.t.data()[c]});
    }
  }
  return rows;
}

std::string affine_csv(const std::vector<AffineRow>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << "stage,block,channel,s,t\n";
  for (const auto& r : rows) os << r.stage << ',' << r.block << ',' << r.channel << ',' << r.s << ',' << r.t << '\n';
  return os.str();
}

}  // namespace riformer
