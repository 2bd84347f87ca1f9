#include "lpie/profiler.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <iomanip>
#include <new>
#include <numeric>
#include <sstream>

#include "lpie/gradcheck.hpp"
#include "lpie/parallel.hpp"

namespace lpie::profiler {

namespace {

std::size_t round_up4(std::size_t v) { return (v + 3) / 4 * 4; }

std::size_t parse_dim(const std::string& text, const std::string& whole) {
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || v == 0) {
    throw ConfigError("resolutions", "bad resolution '" + whole + "'");
  }
  return v;
}

}  // namespace

Resolution Resolution::parse(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos) {
    const std::size_t s = parse_dim(text, text);
    return {s, s};
  }
  return {parse_dim(text.substr(x + 1), text), parse_dim(text.substr(0, x), text)};
}

std::string Resolution::str() const { return std::to_string(w) + "x" + std::to_string(h); }

std::vector<Resolution> parse_resolutions(const std::string& csv) {
  std::vector<Resolution> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(Resolution::parse(item));
  }
  if (out.empty()) throw ConfigError("resolutions", "no resolutions given");
  return out;
}

std::uint64_t count_params(const model::ModelConfig& config) { return model::param_count(config); }

ComplexityReport count_macs(const model::ModelConfig& config, std::size_t h, std::size_t w) {
  config.validate();
  ComplexityReport r;
  r.input = {h, w};
  r.padded = {round_up4(h), round_up4(w)};
  for (const auto& l : model::conv_layers(config)) {
    const std::uint64_t per_pixel = l.weight_count();
    const std::uint64_t pixels = l.scale == 0 ? 1 : (r.padded.h / l.scale) * (r.padded.w / l.scale);
    LayerCost row{l.path, l.param_count(), per_pixel * pixels * l.applications};
    r.total_params += row.params;
    r.total_macs += row.macs;
    r.rows.push_back(std::move(row));
  }
  return r;
}

std::string ComplexityReport::table() const {
  std::ostringstream os;
  os << "input " << input.str() << " (counted at " << padded.str() << ")\n";
  os << std::left << std::setw(22) << "layer" << std::right << std::setw(10) << "params" << std::setw(16) << "MACs"
     << "\n";
  for (const auto& row : rows) {
    os << std::left << std::setw(22) << row.path << std::right << std::setw(10) << row.params << std::setw(16)
       << row.macs << "\n";
  }
  os << std::left << std::setw(22) << "total" << std::right << std::setw(10) << total_params << std::setw(16)
     << total_macs << "\n";
  os << std::showpoint << std::setprecision(3) << "GMACs " << gmacs() << "  GFLOPs " << gflops() << "\n";
  return os.str();
}

std::string ComplexityReport::key_values() const {
  std::ostringstream os;
  os << "resolution=" << input.str() << " params=" << total_params << " macs=" << total_macs << std::showpoint << std::setprecision(3)
     << " gmacs=" << gmacs() << " flops=" << flops() << " gflops=" << std::setprecision(4) << gflops() << "\n";
  return os.str();
}

std::vector<FlopsRow> flops_table(const model::ModelConfig& config, const std::vector<Resolution>& resolutions) {
  std::vector<FlopsRow> out;
  for (const auto& r : resolutions) out.push_back({r, count_macs(config, r.h, r.w).total_macs});
  return out;
}

std::string format_flops_table(const std::vector<FlopsRow>& rows) {
  std::ostringstream os;
  os << std::right << std::setw(12) << "FLOPs (G)" << std::setw(14) << "Resolution" << "\n";
  for (const auto& r : rows) {
    os << std::setw(12) << std::fixed << std::setprecision(2) << r.gflops() << std::setw(14) << r.resolution.str()
       << "\n";
  }
  return os.str();
}

BenchResult benchmark(const model::Model<float>& model, Resolution resolution, std::size_t iterations,
                      std::size_t warmup) {
  BenchResult r;
  r.resolution = resolution;
  r.warmup = std::max(warmup, kMinBenchWarmup);
  r.threads = num_threads();
  r.gflops = count_macs(model.config(), resolution.h, resolution.w).gflops();
  iterations = std::max(iterations, kMinBenchIterations);
  try {
    Rng rng(0x62656e6368ULL);
    const Tensor<float> input = uniform_tensor<float>(Shape{1, 3, resolution.h, resolution.w}, rng, 0.0, 1.0);
    for (std::size_t i = 0; i < r.warmup; ++i) (void)model.forward(input);
    for (std::size_t i = 0; i < iterations; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor<float> out = model.forward(input);
      const auto t1 = std::chrono::steady_clock::now();
      r.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
  } catch (const std::bad_alloc&) {
    r.out_of_memory = true;
    r.failure = "out of memory";
    r.seconds.clear();
    return r;
  }
  r.mean = std::accumulate(r.seconds.begin(), r.seconds.end(), 0.0) / static_cast<double>(r.seconds.size());
  r.min = *std::min_element(r.seconds.begin(), r.seconds.end());
  return r;
}

std::string format_bench_table(const std::vector<BenchResult>& results) {
  std::ostringstream os;
  os << std::right << std::setw(12) << "FLOPs (G)" << std::setw(14) << "Resolution" << std::setw(12) << "Mean (s)"
     << std::setw(12) << "Min (s)" << std::setw(7) << "Iters" << std::setw(9) << "Threads" << "\n";
  for (const auto& r : results) {
    os << std::setw(12) << std::fixed << std::setprecision(2) << r.gflops << std::setw(14) << r.resolution.str();
    if (r.out_of_memory) {
      os << std::setw(12) << "x (OOM)" << std::setw(12) << "x";
    } else {
      os << std::setw(12) << std::setprecision(4) << r.mean << std::setw(12) << r.min;
    }
    os << std::setw(7) << r.iterations() << std::setw(9) << r.threads << "\n";
  }
  return os.str();
}

std::string bench_key_values(const BenchResult& r) {
  std::ostringstream os;
  os << "resolution=" << r.resolution.str() << " gflops=" << std::setprecision(4) << r.gflops
     << " iterations=" << r.iterations() << " warmup=" << r.warmup << " threads=" << r.threads;
  if (r.out_of_memory) {
    os << " status=oom";
  } else if (!r.failure.empty()) {
    os << " status=error";
  } else {
    os << std::setprecision(6) << " mean_s=" << r.mean << " min_s=" << r.min << " status=ok";
  }
  os << "\n";
  return os.str();
}

}  // namespace lpie::profiler
