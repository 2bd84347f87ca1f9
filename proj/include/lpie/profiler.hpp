#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpie/model.hpp"

namespace lpie::profiler {

struct Resolution {
  std::size_t h = 0;
  std::size_t w = 0;
  // "256" (square) or "<w>x<h>", e.g. "1920x1080".
  static Resolution parse(const std::string& text);
  std::string str() const;
  bool operator==(const Resolution&) const = default;
};

std::vector<Resolution> parse_resolutions(const std::string& csv);

struct LayerCost {
  std::string path;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

struct ComplexityReport {
  Resolution input;   // as requested
  Resolution padded;  // rounded up to multiples of 4
  std::vector<LayerCost> rows;
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;

  double gmacs() const { return static_cast<double>(total_macs) / 1e9; }
  std::uint64_t flops() const { return 2 * total_macs; }
  double gflops() const { return static_cast<double>(flops()) / 1e9; }

  // Per-layer table followed by totals.
  std::string table() const;
  // key=value lines: resolution, params, macs, gmacs, flops, gflops.
  std::string key_values() const;
};

std::uint64_t count_params(const model::ModelConfig& config);
template <typename T>
std::uint64_t count_params(const model::Model<T>& model) {
  return model.params().scalar_count();
}

// Convolution MACs = h_out * w_out * c_out * (c_in / groups) * k^2; every
// other op counts zero.
ComplexityReport count_macs(const model::ModelConfig& config, std::size_t h, std::size_t w);

struct FlopsRow {
  Resolution resolution;
  std::uint64_t macs = 0;
  double gflops() const { return 2.0 * static_cast<double>(macs) / 1e9; }
};

std::vector<FlopsRow> flops_table(const model::ModelConfig& config, const std::vector<Resolution>& resolutions);
std::string format_flops_table(const std::vector<FlopsRow>& rows);

struct BenchResult {
  Resolution resolution;
  std::size_t warmup = 0;
  std::vector<double> seconds;  // one per timed iteration
  double mean = 0;
  double min = 0;
  std::size_t threads = 1;
  double gflops = 0;
  bool out_of_memory = false;
  std::string failure;

  std::size_t iterations() const { return seconds.size(); }
};

inline constexpr std::size_t kMinBenchIterations = 5;
inline constexpr std::size_t kMinBenchWarmup = 2;

// Times single-image forward passes on a fixed pseudo-random input. Fewer
// than 5 iterations or 2 warmups are raised to those minimums. Allocation
// failure yields out_of_memory = true instead of throwing.
BenchResult benchmark(const model::Model<float>& model, Resolution resolution, std::size_t iterations = 5,
                      std::size_t warmup = 2);

// Rows: FLOPs (G) | Resolution | Mean (s) | Min (s) | Iters | Threads; failed runs show "x (OOM)".
std::string format_bench_table(const std::vector<BenchResult>& results);
std::string bench_key_values(const BenchResult& r);

}  // namespace lpie::profiler
