// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "lpie/checkpoint.hpp"
#include "lpie/degrade.hpp"
#include "lpie/gradcheck_suite.hpp"
#include "lpie/objectives.hpp"
#include "lpie/parallel.hpp"
#include "lpie/profiler.hpp"
#include "lpie/tensor_io.hpp"
#include "lpie/trainkit.hpp"
#include "support.hpp"

using namespace lpie;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

using Criterion = std::function<void(Outcome&)>;

void params_budget(Outcome& o) {
  const double base = static_cast<double>(profiler::count_params(model::ModelConfig::base()));
  const double large = static_cast<double>(profiler::count_params(model::ModelConfig::large()));
  o.detail << "base=" << base << " large=" << large << " ratio=" << large / base << " ";
  o.check(base >= 0.10e6 && base <= 0.16e6, "base in [0.10M, 0.16M]");
  o.check(large / base >= 3.5 && large / base <= 4.5, "ratio in [3.5, 4.5]");
  o.check(large >= 0.45e6 && large <= 0.75e6, "large in [0.45M, 0.75M]");
}

void macs_budget(Outcome& o) {
  auto k5 = model::ModelConfig::base();
  k5.kernel_size = 5;
  const double g3 = profiler::count_macs(model::ModelConfig::base(), 256, 256).gmacs();
  const double g5 = profiler::count_macs(k5, 256, 256).gmacs();
  o.detail << "gmacs_k3=" << g3 << " gmacs_k5=" << g5 << " ";
  o.check(g3 >= 1.1 && g3 <= 1.5, "k3 in [1.1, 1.5]");
  o.check(g5 >= 1.25 && g5 <= 1.6, "k5 in [1.25, 1.6]");
  o.check(g5 > g3, "k5 > k3");
}

void flops_scaling(Outcome& o) {
  const auto rows =
      profiler::flops_table(model::ModelConfig::base(), profiler::parse_resolutions("256,800,1920x1080,3840x2160"));
  const double r1 = rows[1].gflops() / rows[0].gflops();
  const double r2 = rows[3].gflops() / rows[2].gflops();
  o.detail << "800/256=" << r1 << " 4K/FHD=" << r2 << " ";
  o.check(std::abs(r1 - 9.77) <= 0.03 * 9.77, "800/256 within 3% of 9.77");
  o.check(std::abs(r2 - 4.0) <= 0.03 * 4.0, "4K/FHD within 3% of 4.0");
}

void gradients(Outcome& o) {
  const auto cases = ad::run_gradcheck_suite(5);
  double worst = 0;
  std::string worst_name;
  std::size_t checked = 0;
  for (const auto& c : cases) {
    checked += c.checked;
    if (!(c.max_relative_error <= worst)) {
      worst = c.max_relative_error;
      worst_name = c.name;
    }
    o.check(c.max_relative_error < 1e-4, c.name + " " + c.worst);
    o.check(c.checked > 0, c.name + " checked no coordinates");
  }
  o.detail << cases.size() << " cases x 5 seeds, " << checked << " coords, max_rel_err=" << worst << " (" << worst_name
           << ") ";
}

void degeneracies(Outcome& o) {
  const Tensor<float> x = support::synth_image(5, 48, 40);
  degrade::DegradationConfig id;
  id.x_max = 10.0;
  const float e_id = max_abs_diff(degrade::apply(x, id), x);
  o.check(e_id <= 1e-7f, "identity within 1e-7");

  const auto den = degrade::preset(degrade::Task::denoise);
  Rng rng(den.seed);
  const float e_den = max_abs_diff(degrade::apply(x, den), degrade::add_noise(x, 0.0, den.beta2, rng));
  o.check(e_den == 0.0f, "denoise == x + n");

  const auto blur = degrade::preset(degrade::Task::deblur);
  const float e_blur = max_abs_diff(degrade::apply(x, blur), degrade::psf_convolve(x, blur.psf.make()));
  o.check(e_blur == 0.0f, "deblur == x * k");
  o.detail << "identity_err=" << e_id << " denoise_err=" << e_den << " deblur_err=" << e_blur << " ";
}

void noise_calibration(Outcome& o) {
  const double beta1 = 0.02, beta2 = 0.001;
  double worst = 0;
  for (int level = 1; level <= 9; ++level) {
    const double v = level / 10.0;
    Rng rng(1000 + level);
    const auto y = degrade::add_noise(Tensor<double>({1, 1, 1000, 1000}, v), beta1, beta2, rng);
    double s = 0, s2 = 0;
    for (double e : y.data()) {
      s += e - v;
      s2 += (e - v) * (e - v);
    }
    const double n = static_cast<double>(y.numel());
    const double var = s2 / n - (s / n) * (s / n);
    const double rel = std::abs(var / (beta1 * v + beta2) - 1);
    worst = std::max(worst, rel);
    o.check(rel < 0.02, "level " + std::to_string(v));
  }
  o.detail << "9 levels x 1e6 samples, worst relative variance error=" << worst << " ";
}

void tone_round_trip(Outcome& o) {
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const double x = 10.0 * i / 999.0;
    worst = std::max(worst, std::abs(degrade::inverse_tone_map(degrade::tone_map(x)) - x));
  }
  o.detail << "max |g(f(x)) - x|=" << worst << " ";
  o.check(worst < 1e-6, "round trip < 1e-6");
}

void metric_sanity(Outcome& o) {
  const Tensor<double> x = support::synth_image(6, 32, 32).cast<double>();
  const double s = objectives::ssim(x, x);
  Tensor<double> shifted = x;
  for (double& v : shifted.storage()) v += 0.1;
  const double p = objectives::psnr(shifted, x);
  Tensor<double> q = x, q_off = x;
  for (std::size_t i = 0; i < q.numel(); ++i) {
    q[i] = std::round(x[i] * 255) / 256;
    q_off[i] = q[i] + 0.25;
  }
  const double g = objectives::gradient_loss(q_off, q);
  o.detail << "ssim(x,x)=" << s << " psnr=" << p << " grad_offset=" << g << " ";
  o.check(std::abs(s - 1) <= 1e-9, "ssim(x,x) = 1");
  o.check(std::abs(p - 20.0) <= 0.01, "psnr = 20.00");
  o.check(g == 0.0, "gradient loss of offset = 0");
}

void toy_training(Outcome& o) {
  trainkit::TrainConfig cfg;
  cfg.model = model::ModelConfig::tiny();
  cfg.epochs = 200;
  cfg.patch_size = 64;
  cfg.batch_size = 4;
  cfg.patches_per_image = 2;
  cfg.degradation = degrade::preset(degrade::Task::denoise);
  trainkit::TrainData data;
  for (int i = 0; i < 10; ++i) data.clean.push_back(support::synth_image(100 + i, 64, 64));
  auto state = trainkit::TrainState::fresh(model::Model<float>::build(cfg.model, 0), cfg);
  const auto t0 = std::chrono::steady_clock::now();
  trainkit::train_loop(state, data, cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  double noisy = 0, restored = 0;
  for (int i = 0; i < 5; ++i) {
    const auto clean = support::synth_image(900 + i, 64, 64);
    Rng rng(55 + i);
    const auto in = degrade::apply(clean, *cfg.degradation, rng);
    noisy += objectives::psnr(in, clean) / 5;
    restored += objectives::psnr(state.model.forward(in), clean) / 5;
  }
  o.detail << "held-out noisy=" << noisy << " dB restored=" << restored << " dB gain=" << restored - noisy
           << " dB train_time=" << secs << " s ";
  o.check(restored - noisy >= 2.0, "gain >= 2 dB");
}

void output_range(Outcome& o) {
  const auto m = model::Model<float>::build(model::ModelConfig::base(), 10);
  auto hot = model::Model<float>::build(model::ModelConfig::tiny(), 11);
  for (auto& e : hot.params().entries())
    for (float& v : e.value.storage()) v *= 4;
  const float hi = static_cast<float>(1.0 - 1e-5);
  std::size_t count = 0, bad = 0;
  float lo_seen = 1, hi_seen = 0;
  Rng rng(12);
  for (int b = 0; b < 100; ++b) {
    const double lo = b % 4 == 3 ? -5.0 : 0.0, up = b % 4 == 3 ? 6.0 : 1.0;
    const auto x = uniform_tensor<float>({100, 3, 8, 8}, rng, lo, up);
    for (const model::Model<float>* net : {&m, static_cast<const model::Model<float>*>(&hot)}) {
      if (net == &hot && b % 2 == 0) continue;
      const auto y = net->forward(x);
      for (float v : y.data()) {
        lo_seen = std::min(lo_seen, v);
        hi_seen = std::max(hi_seen, v);
        bad += !(v >= 0.0f && v <= hi);
      }
    }
    count += 100;
  }
  o.detail << count << " inputs (+5000 through an amplified model), output range [" << lo_seen << ", " << hi_seen
           << "] ";
  o.check(bad == 0, std::to_string(bad) + " outputs outside [0, 1-1e-5]");
}

bool same_bytes(const model::Model<float>& a, const model::Model<float>& b) {
  std::stringstream sa, sb;
  write_checkpoint(sa, a);
  write_checkpoint(sb, b);
  return sa.str() == sb.str();
}

void persistence(Outcome& o) {
  const int threads = num_threads();
  set_num_threads(1);
  trainkit::TrainConfig cfg;
  cfg.model = model::ModelConfig::tiny();
  cfg.epochs = 6;
  cfg.patch_size = 32;
  cfg.patch_schedule = {{0, 16}, {3, 32}};
  cfg.degradation = degrade::preset(degrade::Task::udc);
  cfg.seed = 21;
  trainkit::TrainData data;
  for (int i = 0; i < 6; ++i) data.clean.push_back(support::synth_image(200 + i, 40, 36));
  const auto init = model::Model<float>::build(cfg.model, cfg.seed);

  auto a = trainkit::TrainState::fresh(init, cfg);
  auto b = trainkit::TrainState::fresh(init, cfg);
  trainkit::train_loop(a, data, cfg);
  trainkit::train_loop(b, data, cfg);
  o.check(same_bytes(a.model, b.model), "same seed, identical weights");

  support::TempDir dir("acceptance");
  auto c = trainkit::TrainState::fresh(init, cfg);
  trainkit::TrainHooks stop;
  stop.max_epochs_this_call = 3;
  trainkit::train_loop(c, data, cfg, stop);
  save_checkpoint(dir / "state.lpck", c.model, c.to_extras());
  auto resumed = trainkit::TrainState::from_checkpoint(load_checkpoint(dir / "state.lpck"));
  trainkit::train_loop(resumed, data, cfg);
  o.check(same_bytes(a.model, resumed.model), "resume matches uninterrupted run");
  o.check(resumed.lr == a.lr && resumed.adam.t == a.adam.t && resumed.best_val == a.best_val,
          "resumed optimizer/schedule state");
  std::stringstream sa, sr;
  write_checkpoint(sa, a.model, a.to_extras());
  write_checkpoint(sr, resumed.model, resumed.to_extras());
  o.check(sa.str() == sr.str(), "resumable state bytes identical");

  const std::string bytes = sa.str();
  const Checkpoint back = read_checkpoint(sa);
  std::stringstream again;
  write_checkpoint(again, back.model, back.extras);
  o.check(again.str() == bytes, "LPCK round trip");

  Tensor<float> t({2, 3, 5, 7});
  Rng rng(3);
  for (float& v : t.storage()) v = static_cast<float>(rng.normal() * 1e3);
  t[0] = -0.0f;
  t[1] = 1e-42f;
  t[2] = std::numeric_limits<float>::infinity();
  save_lpt1(dir / "t.lpt1", t);
  const auto tb = load_lpt1(dir / "t.lpt1");
  save_lpt1(dir / "u.lpt1", tb);
  o.check(support::read_file(dir / "t.lpt1") == support::read_file(dir / "u.lpt1") && std::signbit(tb[0]) &&
              tb[1] == 1e-42f && tb.shape() == t.shape(),
          "LPT1 round trip");
  set_num_threads(threads);
  o.detail << "training, resume, LPCK and LPT1 checks ";
}

void bench_protocol(Outcome& o) {
  std::ostringstream out, err;
  const int code = cli::run({"bench", "--resolutions", "256,512", "--iters", "5"}, out, err);
  o.check(code == 0, "bench exit code " + std::to_string(code) + " " + err.str());
  const std::string text = out.str();
  std::map<std::string, double> mean;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("resolution=", 0) != 0) continue;
    std::map<std::string, std::string> kv;
    std::istringstream tokens(line);
    std::string tok;
    while (tokens >> tok) {
      const auto eq = tok.find('=');
      if (eq != std::string::npos) kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    o.check(kv["status"] == "ok", line);
    o.check(std::stoul(kv["iterations"]) >= 5, "iterations >= 5 in " + line);
    mean[kv["resolution"]] = std::stod(kv["mean_s"]);
  }
  o.check(mean.size() == 2, "two key=value rows");
  o.check(mean["512x512"] > mean["256x256"], "mean time increases with resolution");
  for (const char* col : {"FLOPs (G)", "Resolution", "Mean (s)", "Iters"})
    o.check(text.find(col) != std::string::npos, std::string("column ") + col);
  o.detail << "mean_256=" << mean["256x256"] << " s mean_512=" << mean["512x512"] << " s ";
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, Criterion>> criteria{
      {"parameter budget", params_budget},
      {"MACs budget", macs_budget},
      {"FLOPs scaling law", flops_scaling},
      {"gradient correctness", gradients},
      {"degradation degeneracies", degeneracies},
      {"noise calibration", noise_calibration},
      {"tone-map round trip", tone_round_trip},
      {"metric sanity", metric_sanity},
      {"toy end-to-end training", toy_training},
      {"output-range contract", output_range},
      {"determinism and persistence", persistence},
      {"benchmark protocol", bench_protocol},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  configure_threads_from_env();
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[exception: " << e.what() << "] ";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("criterion %2d %-28s %s  %s(%.1f s)\n", id, criteria[i].first, o.pass ? "PASS" : "FAIL",
                o.detail.str().c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
