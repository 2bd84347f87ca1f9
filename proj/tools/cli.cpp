#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "lpie/byte_io.hpp"
#include "lpie/checkpoint.hpp"
#include "lpie/degrade.hpp"
#include "lpie/gradcheck_suite.hpp"
#include "lpie/image_io.hpp"
#include "lpie/model.hpp"
#include "lpie/objectives.hpp"
#include "lpie/parallel.hpp"
#include "lpie/profiler.hpp"
#include "lpie/trainkit.hpp"

namespace lpie::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw UsageError("no such file '" + p.string() + "'");
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out += suffix;
  return out;
}

std::string metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

model::ModelConfig variant_config(const std::string& name) {
  if (name == "base") return model::ModelConfig::base();
  if (name == "large" || name == "L") return model::ModelConfig::large();
  if (name == "tiny") return model::ModelConfig::tiny();
  throw ConfigError("variant", "expected base, large or tiny, got '" + name + "'");
}

bool is_image_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".png" || ext == ".lpt1" || ext == ".lpt";
}

std::vector<fs::path> image_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// clean/ holds the targets; degraded/, if present, the paired inputs under
// the same file names.
void load_pairs(const fs::path& dir, std::vector<Tensor<float>>& clean, std::vector<Tensor<float>>& degraded) {
  const fs::path clean_dir = dir / "clean";
  if (!fs::is_directory(clean_dir)) throw UsageError("missing directory '" + clean_dir.string() + "'");
  const fs::path degraded_dir = dir / "degraded";
  const bool paired = fs::is_directory(degraded_dir);
  for (const auto& p : image_files(clean_dir)) {
    clean.push_back(load_image(p));
    if (paired) {
      const fs::path q = degraded_dir / p.filename();
      require_file(q);
      degraded.push_back(load_image(q));
      if (!(degraded.back().shape() == clean.back().shape()))
        throw ShapeError("'" + q.string() + "' is " + degraded.back().shape().str() + ", clean image is " +
                         clean.back().shape().str());
    }
  }
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data, config, out;
  bool resume = false;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  trainkit::TrainConfig cfg;
  if (!a.config.empty()) {
    require_file(a.config);
    cfg = trainkit::TrainConfig::load(a.config);
  }
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();

  if (!fs::is_directory(a.data)) throw UsageError("no such directory '" + a.data + "'");
  trainkit::TrainData data;
  load_pairs(a.data, data.clean, data.degraded);
  if (data.clean.empty()) throw UsageError("no training images in '" + (fs::path(a.data) / "clean").string() + "'");
  if (data.degraded.empty() && !cfg.degradation)
    throw ConfigError("degrade.task", "required when the data directory has no degraded/ images");
  if (fs::is_directory(fs::path(a.data) / "val")) load_pairs(fs::path(a.data) / "val", data.val_clean, data.val_degraded);

  const fs::path best_path = a.out;
  const fs::path state_path = with_suffix(a.out, ".state");
  const fs::path log_path = with_suffix(a.out, ".log");

  std::optional<trainkit::TrainState> state;
  if (a.resume && fs::exists(state_path)) {
    state = trainkit::TrainState::from_checkpoint(load_checkpoint(state_path));
    if (!(state->model.config() == cfg.model))
      throw ConfigError("model", "architecture differs from the checkpoint being resumed");
    out << "resuming at epoch " << state->next_epoch << "\n";
  } else {
    state = trainkit::TrainState::fresh(model::Model<float>::build(cfg.model, cfg.seed), cfg);
    save_checkpoint(best_path, state->model);
  }

  std::ofstream log(log_path, state->next_epoch > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw FormatError(FormatError::Kind::io, "cannot open '" + log_path.string() + "' for writing");

  trainkit::TrainHooks hooks;
  hooks.on_epoch = [&](const trainkit::EpochLog& e) {
    out << e.str() << "\n" << std::flush;
    log << e.str() << "\n" << std::flush;
  };
  hooks.on_improve = [&](const trainkit::TrainState& s) {
    CheckpointExtras extras;
    extras.step = s.next_epoch;
    save_checkpoint(best_path, s.model, extras);
  };
  hooks.on_state = [&](const trainkit::TrainState& s) { save_checkpoint(state_path, s.model, s.to_extras()); };

  trainkit::train_loop(*state, data, cfg, hooks);
  out << "best_val_loss=" << format_double(state->best_val) << "\n";
  return kExitOk;
}

// ---- enhance ----------------------------------------------------------------

struct EnhanceArgs {
  std::string model, input, output, reference;
  bool ensemble = false;
};

int cmd_enhance(const EnhanceArgs& a, std::ostream& out) {
  require_file(a.model);
  require_file(a.input);
  if (!a.reference.empty()) require_file(a.reference);
  image_format_for(a.output);

  const Checkpoint ckpt = load_checkpoint(a.model);
  const Tensor<float> image = load_image(a.input);
  const Tensor<float> result = a.ensemble ? model::self_ensemble(ckpt.model, image) : ckpt.model.forward(image);
  if (!a.reference.empty()) {
    const Tensor<float> ref = load_image(a.reference);
    if (!(ref.shape() == result.shape()))
      throw ShapeError("reference is " + ref.shape().str() + ", output is " + result.shape().str());
    save_image(a.output, result);
    out << "psnr_db=" << metric(objectives::psnr(result, ref)) << " ssim=" << metric(objectives::ssim(result, ref))
        << "\n";
    return kExitOk;
  }
  save_image(a.output, result);
  return kExitOk;
}

// ---- degrade ----------------------------------------------------------------

struct DegradeArgs {
  std::string input, task, config, output;
  std::optional<std::uint64_t> seed;
  std::optional<double> exposure;
};

int cmd_degrade(const DegradeArgs& a, std::ostream& out) {
  require_file(a.input);
  image_format_for(a.output);
  const degrade::Task task = degrade::parse_task(a.task);
  degrade::DegradationConfig cfg = degrade::preset(task);
  if (!a.config.empty()) {
    require_file(a.config);
    KeyValueText kv = KeyValueText::load(a.config);
    cfg = degrade::DegradationConfig::read(kv, "", cfg);
    kv.reject_unconsumed();
  }
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  if (a.exposure && !(*a.exposure > 0)) throw ConfigError("exposure", "must be positive");

  Tensor<float> image = load_image(a.input);
  if (a.exposure) image = degrade::synthesize_hdr(image, *a.exposure);
  const Tensor<float> result = degrade::apply(image, cfg);

  KeyValueText sidecar;
  sidecar.set("task", std::string(degrade::to_string(task)));
  cfg.write(sidecar);
  if (a.exposure) sidecar.set("exposure", *a.exposure);

  save_image(a.output, result);
  const fs::path sidecar_path = with_suffix(a.output, ".cfg");
  byte_io::write_atomically(sidecar_path, [&](std::ostream& os) { os << sidecar.str(); });
  out << "wrote " << a.output << " (" << sidecar_path.string() << ")\n";
  return kExitOk;
}

// ---- profile / bench --------------------------------------------------------

struct ModelChoice {
  std::string variant = "base";
  std::string config;
  std::optional<std::size_t> kernel_size;
};

model::ModelConfig resolve_config(const ModelChoice& m) {
  model::ModelConfig cfg = variant_config(m.variant);
  if (!m.config.empty()) {
    require_file(m.config);
    cfg = trainkit::TrainConfig::load(m.config).model;
  }
  if (m.kernel_size) cfg.kernel_size = *m.kernel_size;
  cfg.validate();
  return cfg;
}

int cmd_profile(const ModelChoice& m, const std::string& resolutions, std::ostream& out) {
  const model::ModelConfig cfg = resolve_config(m);
  const auto res = profiler::parse_resolutions(resolutions);
  for (const auto& r : res) {
    const auto report = profiler::count_macs(cfg, r.h, r.w);
    out << report.table() << "\n" << report.key_values();
  }
  if (res.size() > 1) out << "\n" << profiler::format_flops_table(profiler::flops_table(cfg, res));
  return kExitOk;
}

struct BenchArgs {
  ModelChoice choice;
  std::string model;
  std::string resolutions = "256,512";
  std::size_t iters = profiler::kMinBenchIterations;
  std::size_t warmup = profiler::kMinBenchWarmup;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  const auto res = profiler::parse_resolutions(a.resolutions);
  std::optional<model::Model<float>> net;
  if (!a.model.empty()) {
    require_file(a.model);
    net.emplace(load_checkpoint(a.model).model);
  } else {
    net.emplace(model::Model<float>::build(resolve_config(a.choice), a.seed));
  }
  std::vector<profiler::BenchResult> results;
  for (const auto& r : res) results.push_back(profiler::benchmark(*net, r, a.iters, a.warmup));
  out << profiler::format_bench_table(results) << "\n";
  bool failed = false;
  for (const auto& r : results) {
    out << profiler::bench_key_values(r);
    failed = failed || (!r.failure.empty() && !r.out_of_memory);
  }
  return failed ? kExitFailure : kExitOk;
}

// ---- eval / gradcheck -------------------------------------------------------

int cmd_eval(const std::string& a, const std::string& b, std::ostream& out) {
  require_file(a);
  require_file(b);
  const Tensor<float> x = load_image(a);
  const Tensor<float> y = load_image(b);
  if (!(x.shape() == y.shape())) throw ShapeError("images differ in shape: " + x.shape().str() + " vs " + y.shape().str());
  out << "psnr_db=" << metric(objectives::psnr(x, y)) << " ssim=" << metric(objectives::ssim(x, y)) << "\n";
  return kExitOk;
}

struct GradcheckArgs {
  std::size_t seeds = 5;
  double threshold = 1e-4;
  double eps = ad::suite_defaults().eps;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  if (!(a.eps > 0)) throw ConfigError("eps", "must be positive");
  ad::GradcheckOptions opt = ad::suite_defaults();
  opt.eps = a.eps;
  bool ok = true;
  for (const auto& c : ad::run_gradcheck_suite(a.seeds, opt)) {
    const bool pass = c.max_relative_error < a.threshold;
    ok = ok && pass;
    out << std::left << std::setw(24) << c.name << " max_rel_err=" << std::scientific << std::setprecision(3)
        << c.max_relative_error << std::defaultfloat << " checked=" << c.checked << " skipped=" << c.skipped
        << (pass ? "" : "  FAIL " + c.worst) << "\n";
  }
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return ok ? kExitOk : kExitFailure;
}

void add_model_choice(CLI::App* cmd, ModelChoice& m) {
  cmd->add_option("--variant", m.variant, "Model size: base, large or tiny")->capture_default_str();
  cmd->add_option("--config", m.config, "Training config whose model.* keys define the architecture");
  cmd->add_option("--kernel-size", m.kernel_size, "Depthwise kernel size override");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lightweight image enhancement toolkit", "lpie"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<int> threads;
  app.add_option("--threads", threads, "Worker thread cap (default: LPIE_THREADS or all cores)")
      ->check(CLI::PositiveNumber);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--data", train.data, "Directory with clean/ and optional degraded/ images")->required();
  c_train->add_option("--config", train.config, "key=value training config");
  c_train->add_option("--out", train.out, "Best checkpoint path (also writes <out>.state and <out>.log)")->required();
  c_train->add_flag("--resume", train.resume, "Continue from <out>.state if present");
  c_train->add_option("--seed", train.seed, "Overrides the config seed");

  EnhanceArgs enhance;
  auto* c_enhance = app.add_subcommand("enhance", "Restore an image with a trained model");
  c_enhance->add_option("--model", enhance.model, "Checkpoint")->required();
  c_enhance->add_option("--input", enhance.input, "Input image (.png or .lpt1)")->required();
  c_enhance->add_option("--output", enhance.output, "Output image (.png or .lpt1)")->required();
  c_enhance->add_flag("--ensemble", enhance.ensemble, "Average over the 8 flips/rotations");
  c_enhance->add_option("--reference", enhance.reference, "Ground truth for PSNR/SSIM");

  DegradeArgs deg;
  auto* c_degrade = app.add_subcommand("degrade", "Synthesize a degraded image");
  c_degrade->add_option("--input", deg.input, "Clean image")->required();
  c_degrade->add_option("--task", deg.task, "denoise, deblur, hdr or udc")->required();
  c_degrade->add_option("--config", deg.config, "key=value overrides of the task preset");
  c_degrade->add_option("--output", deg.output, "Degraded image; parameters go to <output>.cfg")->required();
  c_degrade->add_option("--seed", deg.seed, "Noise seed");
  c_degrade->add_option("--exposure", deg.exposure, "Treat input as display-referred and expand to radiance first");

  ModelChoice prof;
  std::string prof_res = "256";
  auto* c_profile = app.add_subcommand("profile", "Parameter and MAC counts");
  add_model_choice(c_profile, prof);
  c_profile->add_option("--resolutions", prof_res, "Comma-separated sizes, e.g. 256,1920x1080")->capture_default_str();

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Time forward passes");
  add_model_choice(c_bench, bench.choice);
  c_bench->add_option("--model", bench.model, "Checkpoint (default: randomly initialized --variant)");
  c_bench->add_option("--resolutions", bench.resolutions, "Comma-separated sizes")->capture_default_str();
  c_bench->add_option("--iters", bench.iters, "Timed iterations (min 5)")->capture_default_str();
  c_bench->add_option("--warmup", bench.warmup, "Warmup iterations (min 2)")->capture_default_str();
  c_bench->add_option("--seed", bench.seed, "Init seed for random weights")->capture_default_str();

  std::string eval_a, eval_b;
  auto* c_eval = app.add_subcommand("eval", "PSNR/SSIM between two images");
  c_eval->add_option("prediction", eval_a)->required();
  c_eval->add_option("target", eval_b)->required();

  GradcheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  c_grad->add_option("--seeds", gc.seeds, "Seeds per case")->capture_default_str();
  c_grad->add_option("--threshold", gc.threshold, "Maximum relative error")->capture_default_str();
  c_grad->add_option("--eps", gc.eps, "Central-difference step")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "lpie: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (threads) {
      set_num_threads(*threads);
    } else {
      configure_threads_from_env();
    }
    if (c_train->parsed()) return cmd_train(train, out);
    if (c_enhance->parsed()) return cmd_enhance(enhance, out);
    if (c_degrade->parsed()) return cmd_degrade(deg, out);
    if (c_profile->parsed()) return cmd_profile(prof, prof_res, out);
    if (c_bench->parsed()) return cmd_bench(bench, out);
    if (c_eval->parsed()) return cmd_eval(eval_a, eval_b, out);
    if (c_grad->parsed()) return cmd_gradcheck(gc, out);
  } catch (const UsageError& e) {
    err << "lpie: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "lpie: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "lpie: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace lpie::cli
