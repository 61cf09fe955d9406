// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "riformer/model.hpp"
#include "riformer/ops.hpp"

namespace riformer {

struct BenchProtocol {
  int batch_size = 32;
  int resolution = 64;
  int warmup_runs = 10;
  int timed_runs = 30;
  int repeats = 3;

  void validate() const;
};

// Wall time of every timed run, grouped by repeat.
struct RawTimings {
  std::vector<std::vector<double>> runs_ms;
};

struct BenchReport {
  std::string model;
  std::string component = "full";
  int batch_size = 0;
  std::vector<double> repeat_mean_ms;
  double mean_ms = 0.0;    // mean over all timed runs
  double median_ms = 0.0;  // median of the per-repeat means
  double images_per_s = 0.0;
  int thread_count = 1;
  std::string isa;
  RawTimings raw;
};

// Pure reduction: re-reducing stored timings reproduces the report.
BenchReport reduce_timings(const std::string& model, const std::string& component, int batch_size,
                           const RawTimings& raw, int thread_count, const std::string& isa);

RawTimings time_runs(const std::function<void()>& run, const BenchProtocol& protocol);

// Feature extraction (no head) on pre-generated N(0,1) inputs.
BenchReport throughput(const Model& model, const BenchProtocol& protocol, const std::string& name);

// Measures several models with their repeats interleaved, so slow drifts of
// the machine hit every model alike.
std::vector<BenchReport> compare_throughput(const std::vector<std::pair<std::string, const Model*>>& models,
                                            const BenchProtocol& protocol);

struct BreakdownRow {
  std::string component;   // embed, norm, mixer, mlp
  BenchReport cumulative;  // model with every component up to this one
  double delta_ms = 0.0;   // median latency added by this component
  double delta_spread_ms = 0.0;
  bool negative = false;   // delta below zero: measurement noise
};

std::vector<BreakdownRow> latency_breakdown(const Model& model, const BenchProtocol& protocol,
                                            const std::string& name);

// Analytic operation count of one feature-extraction forward pass.
ops::OpCounts count_ops(const Model& model, int batch_size);

std::string bench_csv(const std::vector<BenchReport>& reports);
std::string breakdown_csv(const std::string& model, const std::vector<BreakdownRow>& rows);
std::string bench_json(const std::vector<BenchReport>& reports);

}  // namespace riformer
