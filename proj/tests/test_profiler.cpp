#include <gtest/gtest.h>

#include <map>

#include "lpie/profiler.hpp"

using namespace lpie;
using namespace lpie::profiler;

namespace {

std::uint64_t pooled_mlp_macs(const ComplexityReport& r) {
  std::uint64_t s = 0;
  for (const auto& row : r.rows)
    if (row.path.find(".ca.") != std::string::npos) s += row.macs;
  return s;
}

}  // namespace

TEST(Counting, SingleLayerArithmetic) {
  const model::ConvLayer stem{"stem", 3, 16, 3, 1, true, 1, 1};
  EXPECT_EQ(stem.param_count(), 448u);
  const model::ConvLayer pw{"pw", 16, 32, 1, 1, true, 1, 1};
  EXPECT_EQ(pw.weight_count() * 256 * 256, 33554432u);

  const auto r = count_macs(model::ModelConfig::base(), 256, 256);
  std::map<std::string, std::uint64_t> macs;
  for (const auto& row : r.rows) macs[row.path] = row.macs;
  EXPECT_EQ(macs.at("stem"), 256u * 256 * 16 * 3 * 9);
  // enc2.ir1.expand: 16 -> 128 pointwise at half resolution.
  EXPECT_EQ(macs.at("enc2.ir1.expand"), 128u * 128 * 128 * 16);
  EXPECT_EQ(macs.at("enc1.ir1.depthwise"), 256u * 256 * 64 * 9);
  EXPECT_EQ(macs.at("enc1.ca.fc1"), 2u * 16 * 4);
}

TEST(Counting, TotalsAreRowSums) {
  const auto r = count_macs(model::ModelConfig::base(), 96, 64);
  std::uint64_t p = 0, m = 0;
  for (const auto& row : r.rows) {
    p += row.params;
    m += row.macs;
  }
  EXPECT_EQ(r.total_params, p);
  EXPECT_EQ(r.total_macs, m);
  EXPECT_EQ(r.total_params, count_params(model::ModelConfig::base()));
  EXPECT_EQ(r.flops(), 2 * r.total_macs);
  EXPECT_EQ(count_params(model::Model<float>::build(model::ModelConfig::base(), 0)), r.total_params);
  EXPECT_EQ(count_macs(model::ModelConfig::base(), 512, 512).total_params, r.total_params);
}

TEST(Counting, Budgets) {
  const double g3 = count_macs(model::ModelConfig::base(), 256, 256).gmacs();
  auto k5 = model::ModelConfig::base();
  k5.kernel_size = 5;
  const double g5 = count_macs(k5, 256, 256).gmacs();
  EXPECT_GE(g3, 1.1);
  EXPECT_LE(g3, 1.5);
  EXPECT_GE(g5, 1.25);
  EXPECT_LE(g5, 1.6);
  EXPECT_GT(g5, g3);
  EXPECT_GT(count_params(k5), count_params(model::ModelConfig::base()));
}

TEST(Counting, SpatialLayersScaleExactlyByFour) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{64, 64}, {128, 96}, {540, 960}}) {
    const auto a = count_macs(model::ModelConfig::base(), h, w);
    const auto b = count_macs(model::ModelConfig::base(), 2 * h, 2 * w);
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      if (a.rows[i].path.find(".ca.") != std::string::npos) {
        EXPECT_EQ(b.rows[i].macs, a.rows[i].macs);
      } else {
        EXPECT_EQ(b.rows[i].macs, 4 * a.rows[i].macs) << a.rows[i].path;
      }
    }
    EXPECT_EQ(b.total_macs, 4 * a.total_macs - 3 * pooled_mlp_macs(a));
  }
}

TEST(Counting, PaddingToMultipleOfFour) {
  const auto r = count_macs(model::ModelConfig::base(), 250, 250);
  EXPECT_EQ(r.padded, (Resolution{252, 252}));
  EXPECT_EQ(r.total_macs, count_macs(model::ModelConfig::base(), 252, 252).total_macs);
  const auto fhd = count_macs(model::ModelConfig::base(), 1080, 1920);
  EXPECT_EQ(fhd.padded, (Resolution{1080, 1920}));
}

TEST(Counting, MatchesInstrumentedForward) {
  for (auto cfg : {model::ModelConfig::tiny(), model::ModelConfig::base()}) {
    const auto m = model::Model<float>::build(cfg, 0);
    std::map<std::string, std::uint64_t> seen;
    model::ConvObserver obs = [&](const std::string& path, const Shape&, const Shape& weight, std::size_t,
                                  const Shape& out) {
      seen[path] += out.n * out.h * out.w * weight.n * weight.c * weight.h * weight.w;
    };
    (void)m.forward(Tensor<float>({1, 3, 16, 16}, 0.5f), &obs);
    const auto r = count_macs(cfg, 16, 16);
    ASSERT_EQ(seen.size(), r.rows.size());
    for (const auto& row : r.rows) EXPECT_EQ(seen.at(row.path), row.macs) << row.path;
  }
}

TEST(Flops, ScalingLaw) {
  const auto rows = flops_table(model::ModelConfig::base(), parse_resolutions("256,800,1920x1080,3840x2160"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_NEAR(rows[1].gflops() / rows[0].gflops(), 9.77, 9.77 * 0.03);
  EXPECT_NEAR(rows[3].gflops() / rows[2].gflops(), 4.0, 4.0 * 0.03);
  EXPECT_EQ(rows[0].macs, count_macs(model::ModelConfig::base(), 256, 256).total_macs);
  const std::string t = format_flops_table(rows);
  EXPECT_NE(t.find("3840x2160"), std::string::npos);
  EXPECT_NE(t.find("FLOPs (G)"), std::string::npos);
}

TEST(Flops, ResolutionParsing) {
  EXPECT_EQ(Resolution::parse("256"), (Resolution{256, 256}));
  EXPECT_EQ(Resolution::parse("1920x1080"), (Resolution{1080, 1920}));
  EXPECT_EQ(Resolution::parse("1920x1080").str(), "1920x1080");
  for (const char* bad : {"", "0", "12x", "axb", "-4", "256x256x3"}) EXPECT_THROW(Resolution::parse(bad), ConfigError) << bad;
  EXPECT_THROW(parse_resolutions(","), ConfigError);
}

TEST(Report, TextFormats) {
  const auto r = count_macs(model::ModelConfig::base(), 256, 256);
  const std::string kv = r.key_values();
  EXPECT_NE(kv.find("resolution=256x256 params=123162 macs=" + std::to_string(r.total_macs)), std::string::npos);
  EXPECT_NE(kv.find("gmacs=1.20 "), std::string::npos);
  EXPECT_NE(kv.find("flops=" + std::to_string(2 * r.total_macs)), std::string::npos);
  const std::string t = r.table();
  EXPECT_NE(t.find("enc1.sa.conv"), std::string::npos);
  EXPECT_NE(t.find("GMACs 1.20"), std::string::npos);
}

TEST(Bench, ProtocolAndFormatting) {
  const auto m = model::Model<float>::build(model::ModelConfig::tiny(), 0);
  const auto r = benchmark(m, {32, 48}, 1, 0);
  EXPECT_EQ(r.iterations(), kMinBenchIterations);
  EXPECT_EQ(r.warmup, kMinBenchWarmup);
  EXPECT_FALSE(r.out_of_memory);
  EXPECT_GE(r.mean, r.min);
  EXPECT_GT(r.min, 0.0);
  EXPECT_EQ(benchmark(m, {16, 16}, 7).iterations(), 7u);

  BenchResult oom;
  oom.resolution = {4320, 7680};
  oom.out_of_memory = true;
  const std::string t = format_bench_table({r, oom});
  EXPECT_NE(t.find("48x32"), std::string::npos);
  EXPECT_NE(t.find("x (OOM)"), std::string::npos);
  EXPECT_NE(bench_key_values(oom).find("status=oom"), std::string::npos);
  const std::string kv = bench_key_values(r);
  EXPECT_NE(kv.find("iterations=5 warmup=2"), std::string::npos);
  EXPECT_NE(kv.find("status=ok"), std::string::npos);
}
