#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "lpie/checkpoint.hpp"
#include "lpie/config_text.hpp"
#include "lpie/image_io.hpp"
#include "lpie/tensor_io.hpp"
#include "support.hpp"

using namespace lpie;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result lpie_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  args.insert(args.begin(), {"--threads", "1"});
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

const fs::path kData = LPIE_TEST_DATA;

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  auto r = lpie_cli({"--help"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_NE(r.out.find("enhance"), std::string::npos);
  EXPECT_EQ(lpie_cli({}).code, cli::kExitUsage);
  EXPECT_EQ(lpie_cli({"sharpen"}).code, cli::kExitUsage);
  EXPECT_EQ(lpie_cli({"enhance", "--model", "x"}).code, cli::kExitUsage);
  r = lpie_cli({"profile", "--variant", "huge"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("variant"), std::string::npos);
}

TEST(Cli, EnhanceReproducesGoldenOutput) {
  support::TempDir dir("cli_enhance");
  const auto out = dir / "out.lpt1";
  const auto r = lpie_cli({"enhance", "--model", (kData / "golden_tiny.lpck").string(), "--input",
                           (kData / "golden_input.lpt1").string(), "--output", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(support::read_file(out), support::read_file(kData / "golden_output.lpt1"));

  const auto r2 = lpie_cli({"enhance", "--model", (kData / "golden_tiny.lpck").string(), "--input",
                            (kData / "golden_input.lpt1").string(), "--output", (dir / "e.lpt1").string(),
                            "--ensemble", "--reference", (kData / "golden_output.lpt1").string()});
  ASSERT_EQ(r2.code, 0) << r2.err;
  EXPECT_EQ(r2.out.rfind("psnr_db=", 0), 0u);
  EXPECT_NE(r2.out.find(" ssim="), std::string::npos);
}

TEST(Cli, EnhanceFailuresWriteNothing) {
  support::TempDir dir("cli_enhance_fail");
  const auto out = dir / "out.lpt1";
  auto r = lpie_cli({"enhance", "--model", (dir / "missing.lpck").string(), "--input",
                     (kData / "golden_input.lpt1").string(), "--output", out.string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("missing.lpck"), std::string::npos);

  std::string bytes = support::read_file(kData / "golden_tiny.lpck");
  bytes.resize(bytes.size() / 2);
  write_text(dir / "bad.lpck", bytes);
  r = lpie_cli({"enhance", "--model", (dir / "bad.lpck").string(), "--input", (kData / "golden_input.lpt1").string(),
                "--output", out.string()});
  EXPECT_EQ(r.code, cli::kExitFailure);
  EXPECT_NE(r.err.find("file ends inside"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, EvalPrintsMetrics) {
  const auto in = (kData / "golden_input.lpt1").string();
  auto r = lpie_cli({"eval", in, in});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "psnr_db=inf ssim=1.000000\n");
  r = lpie_cli({"eval", in, (kData / "golden_output.lpt1").string()});
  ASSERT_EQ(r.code, 0);
  double psnr = 0, ssim = 0;
  ASSERT_EQ(std::sscanf(r.out.c_str(), "psnr_db=%lf ssim=%lf", &psnr, &ssim), 2) << r.out;
  EXPECT_GT(psnr, 0);
  EXPECT_LE(ssim, 1);
}

TEST(Cli, DegradeWritesImageAndSidecar) {
  support::TempDir dir("cli_degrade");
  save_image(dir / "in.png", support::synth_image(1, 24, 32));
  const auto out = dir / "noisy.png";
  auto r = lpie_cli({"degrade", "--input", (dir / "in.png").string(), "--task", "udc", "--output", out.string(),
                     "--seed", "42"});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(fs::exists(out));
  auto kv = KeyValueText::load(dir / "noisy.png.cfg");
  EXPECT_EQ(*kv.take("task"), "udc");
  EXPECT_EQ(kv.take_u64("seed", 0), 42u);
  EXPECT_EQ(load_image(out).shape(), (Shape{1, 3, 24, 32}));

  const auto again = dir / "again.png";
  ASSERT_EQ(lpie_cli({"degrade", "--input", (dir / "in.png").string(), "--task", "udc", "--output", again.string(),
                      "--seed", "42"})
                .code,
            0);
  EXPECT_EQ(support::read_file(again), support::read_file(out));

  // Identity configuration through the config file.
  write_text(dir / "id.cfg", "psf=dirac\npsf_size=1\n");
  const auto id = dir / "id.lpt1";
  r = lpie_cli({"degrade", "--input", (dir / "in.png").string(), "--task", "deblur", "--config",
                (dir / "id.cfg").string(), "--output", id.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(max_abs_diff(load_lpt1(id), load_image(dir / "in.png")), 0.0f);

  write_text(dir / "bad.cfg", "psf=dirac\nblur_amount=3\n");
  r = lpie_cli({"degrade", "--input", (dir / "in.png").string(), "--task", "deblur", "--config",
                (dir / "bad.cfg").string(), "--output", (dir / "x.png").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("blur_amount"), std::string::npos);
  EXPECT_EQ(lpie_cli({"degrade", "--input", (dir / "in.png").string(), "--task", "sharpen", "--output",
                      (dir / "x.png").string()})
                .code,
            cli::kExitUsage);
  EXPECT_FALSE(fs::exists(dir / "x.png"));
}

TEST(Cli, ProfilePrintsCounts) {
  auto r = lpie_cli({"profile"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("resolution=256x256 params=123162"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("gmacs=1.20"), std::string::npos);
  r = lpie_cli({"profile", "--kernel-size", "5", "--resolutions", "256,800,1920x1080"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("FLOPs (G)"), std::string::npos);
  EXPECT_NE(r.out.find("1920x1080"), std::string::npos);
  EXPECT_EQ(lpie_cli({"profile", "--resolutions", "-4"}).code, cli::kExitUsage);
}

TEST(Cli, BenchReportsIterations) {
  const auto r = lpie_cli({"bench", "--variant", "tiny", "--resolutions", "32,64", "--iters", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("resolution=32x32"), std::string::npos);
  EXPECT_NE(r.out.find("resolution=64x64"), std::string::npos);
  EXPECT_NE(r.out.find("iterations=5 warmup=2 threads=1"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("Mean (s)"), std::string::npos);
}

TEST(Cli, GradcheckSingleSeed) {
  const auto r = lpie_cli({"gradcheck", "--seeds", "1"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("gradcheck passed"), std::string::npos);
  EXPECT_NE(r.out.find("tiny_model"), std::string::npos);
}

TEST(Cli, TrainAndResume) {
  support::TempDir dir("cli_train");
  fs::create_directories(dir / "data" / "clean");
  for (int i = 0; i < 5; ++i)
    save_image(dir / "data" / "clean" / ("img" + std::to_string(i) + ".png"), support::synth_image(10 + i, 20, 20));
  const std::string base = "model.channels=4,8,16,8,4\npatch_size=16\nbatch_size=2\nval_fraction=0.2\n";
  write_text(dir / "no_task.cfg", base + "epochs=2\n");
  auto r = lpie_cli({"train", "--data", (dir / "data").string(), "--config", (dir / "no_task.cfg").string(), "--out",
                     (dir / "m.lpck").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("degrade.task"), std::string::npos);

  write_text(dir / "two.cfg", base + "epochs=2\ndegrade.task=denoise\n");
  write_text(dir / "four.cfg", base + "epochs=4\ndegrade.task=denoise\n");
  const auto ckpt = (dir / "m.lpck").string();
  r = lpie_cli({"train", "--data", (dir / "data").string(), "--config", (dir / "two.cfg").string(), "--out", ckpt});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("best_val_loss="), std::string::npos);
  EXPECT_EQ(count_lines(support::read_file(ckpt + ".log")), 2u);
  EXPECT_EQ(load_checkpoint(ckpt + ".state").extras.find_state("next_epoch") != nullptr, true);

  r = lpie_cli({"train", "--data", (dir / "data").string(), "--config", (dir / "four.cfg").string(), "--out", ckpt,
                "--resume"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("resuming at epoch 2"), std::string::npos);
  const std::string log = support::read_file(ckpt + ".log");
  EXPECT_EQ(count_lines(log), 4u);
  EXPECT_NE(log.find("epoch=3 "), std::string::npos);

  // Same run uninterrupted gives the same state.
  const auto ckpt2 = (dir / "n.lpck").string();
  ASSERT_EQ(lpie_cli({"train", "--data", (dir / "data").string(), "--config", (dir / "four.cfg").string(), "--out",
                      ckpt2})
                .code,
            0);
  EXPECT_EQ(support::read_file(ckpt2 + ".state"), support::read_file(ckpt + ".state"));
  EXPECT_EQ(support::read_file(ckpt2), support::read_file(ckpt));

  write_text(dir / "wide.cfg", base + "epochs=6\ndegrade.task=denoise\nmodel.channels=8,8,16,8,8\n");
  r = lpie_cli({"train", "--data", (dir / "data").string(), "--config", (dir / "wide.cfg").string(), "--out", ckpt,
                "--resume"});
  EXPECT_EQ(r.code, cli::kExitUsage);
}
