// Copyright 2026 The riformer-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "riformer/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "riformer/kernels.hpp"
#include "riformer/parallel.hpp"

namespace riformer {

void BenchProtocol::validate() const {
  if (batch_size < 1) throw ShapeError("bench: batch_size must be >= 1");
  if (timed_runs < 1) throw ShapeError("bench: timed_runs must be >= 1");
  if (repeats < 1 || repeats % 2 == 0) throw ShapeError("bench: repeats must be odd and >= 1");
  if (warmup_runs < 0) throw ShapeError("bench: warmup_runs must be >= 0");
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Tensor bench_input(const Model& model, const BenchProtocol& p) {
  if (p.resolution != model.spec.input_resolution) {
    throw ShapeError("bench: resolution " + std::to_string(p.resolution) + " does not match the model (" +
                     std::to_string(model.spec.input_resolution) + ")");
  }
  std::mt19937_64 rng(12345);
  std::normal_distribution<float> dist;
  Tensor x(Shape{p.batch_size, model.spec.in_channels, p.resolution, p.resolution});
  for (auto& v : x.data()) v = dist(rng);
  return x;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

BenchReport reduce_timings(const std::string& model, const std::string& component, int batch_size,
                           const RawTimings& raw, int thread_count, const std::string& isa) {
  if (raw.runs_ms.empty()) throw ShapeError("reduce_timings: no repeats");
  BenchReport r;
  r.model = model;
  r.component = component;
  r.batch_size = batch_size;
  r.thread_count = thread_count;
  r.isa = isa;
  r.raw = raw;
  std::vector<double> all;
  for (const auto& rep : raw.runs_ms) {
    if (rep.empty()) throw ShapeError("reduce_timings: zero timed runs in a repeat");
    r.repeat_mean_ms.push_back(mean(rep));
    all.insert(all.end(), rep.begin(), rep.end());
  }
  r.mean_ms = mean(all);
  r.median_ms = median(r.repeat_mean_ms);
  r.images_per_s = r.median_ms > 0.0 ? static_cast<double>(batch_size) / (r.median_ms / 1000.0) : 0.0;
  return r;
}

RawTimings time_runs(const std::function<void()>& run, const BenchProtocol& protocol) {
  protocol.validate();
  RawTimings raw;
  for (int rep = 0; rep < protocol.repeats; ++rep) {
    for (int i = 0; i < protocol.warmup_runs; ++i) run();
    std::vector<double> times;
    for (int i = 0; i < protocol.timed_runs; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      run();
      times.push_back(elapsed_ms(t0));
    }
    raw.runs_ms.push_back(std::move(times));
  }
  return raw;
}

BenchReport throughput(const Model& model, const BenchProtocol& protocol, const std::string& name) {
  return compare_throughput({{name, &model}}, protocol).front();
}

std::vector<BenchReport> compare_throughput(const std::vector<std::pair<std::string, const Model*>>& models,
                                            const BenchProtocol& protocol) {
  protocol.validate();
  std::vector<Tensor> inputs;
  for (const auto& [name, m] : models) inputs.push_back(bench_input(*m, protocol));
  std::vector<RawTimings> raw(models.size());
  BenchProtocol once = protocol;
  once.repeats = 1;
  for (int rep = 0; rep < protocol.repeats; ++rep) {
    for (std::size_t i = 0; i < models.size(); ++i) {
      const Model& m = *models[i].second;
      const Tensor& x = inputs[i];
      RawTimings one = time_runs([&] { (void)forward_features(m, x); }, once);
      raw[i].runs_ms.push_back(std::move(one.runs_ms.front()));
    }
  }
  std::vector<BenchReport> out;
  for (std::size_t i = 0; i < models.size(); ++i) {
    out.push_back(reduce_timings(models[i].first, "full", protocol.batch_size, raw[i], thread_count(),
                                 kernels::active().name));
  }
  return out;
}

std::vector<BreakdownRow> latency_breakdown(const Model& model, const BenchProtocol& protocol,
                                            const std::string& name) {
  protocol.validate();
  const Tensor x = bench_input(model, protocol);
  const std::pair<Components, const char*> levels[] = {
      {Components::embed, "embed"}, {Components::norm, "norm"}, {Components::mixer, "mixer"}, {Components::full, "mlp"}};
  std::vector<RawTimings> raw(4);
  BenchProtocol once = protocol;
  once.repeats = 1;
  for (int rep = 0; rep < protocol.repeats; ++rep) {
    for (int l = 0; l < 4; ++l) {
      ForwardOptions o;
      o.components = levels[l].first;
      RawTimings one = time_runs([&] { (void)forward_features(model, x, o); }, once);
      raw[l].runs_ms.push_back(std::move(one.runs_ms.front()));
    }
  }
  std::vector<BreakdownRow> rows;
  for (int l = 0; l < 4; ++l) {
    BreakdownRow row;
    row.component = levels[l].second;
    row.cumulative = reduce_timings(name, row.component, protocol.batch_size, raw[l], thread_count(),
                                    kernels::active().name);
    const double prev = l == 0 ? 0.0 : rows.back().cumulative.median_ms;
    row.delta_ms = row.cumulative.median_ms - prev;
    // Spread of the repeat means, combined over the two cumulative models.
    auto spread = [](const std::vector<double>& v) {
      const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
      return *hi - *lo;
    };
    row.delta_spread_ms = spread(row.cumulative.repeat_mean_ms) +
                          (l == 0 ? 0.0 : spread(rows.back().cumulative.repeat_mean_ms));
    row.negative = row.delta_ms < 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

ops::OpCounts count_ops(const Model& model, int batch_size) {
  BenchProtocol p;
  p.batch_size = batch_size;
  p.resolution = model.spec.input_resolution;
  const Tensor x = bench_input(model, p);
  ops::OpCounts counts;
  {
    ops::OpCountScope scope(counts);
    (void)forward_features(model, x);
  }
  return counts;
}

std::string bench_csv(const std::vector<BenchReport>& reports) {
  std::ostringstream os;
  os.precision(9);
  os << "model,component,mean_ms,median_ms,images_per_s,thread_count\n";
  for (const auto& r : reports) {
    os << r.model << ',' << r.component << ',' << r.mean_ms << ',' << r.median_ms << ',' << r.images_per_s << ','
       << r.thread_count << '\n';
  }
  return os.str();
}

std::string breakdown_csv(const std::string& model, const std::vector<BreakdownRow>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << "model,component,mean_ms,median_ms,images_per_s,thread_count\n";
  double prev_mean = 0.0;
  for (const auto& r : rows) {
    os << model << ',' << r.component << ',' << r.cumulative.mean_ms - prev_mean << ',' << r.delta_ms << ','
       << r.cumulative.images_per_s << ',' << r.cumulative.thread_count << '\n';
    prev_mean = r.cumulative.mean_ms;
  }
  return os.str();
}

std::string bench_json(const std::vector<BenchReport>& reports) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["model"] = r.model;
    j["component"] = r.component;
    j["batch_size"] = r.batch_size;
    j["repeat_mean_ms"] = r.repeat_mean_ms;
    j["mean_ms"] = r.mean_ms;
    j["median_ms"] = r.median_ms;
    j["images_per_s"] = r.images_per_s;
    j["thread_count"] = r.thread_count;
    j["isa"] = r.isa;
    j["runs_ms"] = r.raw.runs_ms;
    arr.push_back(j);
  }
  return arr.dump(2);
}

}  // namespace riformer
