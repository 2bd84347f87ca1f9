#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lpie/checkpoint.hpp"
#include "lpie/config_text.hpp"
#include "lpie/degrade.hpp"
#include "lpie/model.hpp"
#include "lpie/objectives.hpp"
#include "lpie/rng.hpp"

namespace lpie::trainkit {

struct PatchStage {
  std::size_t epoch = 0;
  std::size_t size = 0;
  bool operator==(const PatchStage&) const = default;
};

struct TrainConfig {
  double lr0 = 2e-3;
  double lr_min = 1e-6;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 10;
  double plateau_threshold = 1e-4;
  std::size_t batch_size = 4;
  std::size_t epochs = 500;
  // Final crop size; the default schedule ramps 64 -> 128 -> patch_size.
  std::size_t patch_size = 400;
  // Explicit (first epoch, size) stages; empty selects the default ramp.
  std::vector<PatchStage> patch_schedule;
  // Random crops drawn from every training image per epoch.
  std::size_t patches_per_image = 1;
  bool augment = true;
  double val_fraction = 0.1;
  objectives::LossWeights loss;
  std::uint64_t seed = 0;
  model::ModelConfig model;
  // When set, degraded inputs are synthesized from clean crops on the fly.
  std::optional<degrade::DegradationConfig> degradation;

  void validate() const;
  std::vector<PatchStage> effective_schedule() const;
  std::size_t patch_size_at(std::size_t epoch) const;

  void write(KeyValueText& kv) const;
  // Unknown keys raise ConfigError naming the key.
  static TrainConfig read(KeyValueText& kv);
  static TrainConfig load(const std::filesystem::path& path);
};

// ---- optimizer --------------------------------------------------------------

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;
};

// Bias-corrected Adam; moments are created on the first step.
template <typename T>
void adam_step(model::ParameterSet<T>& weights, const std::vector<Tensor<T>>& grads, AdamState<T>& state, double lr,
               const AdamParams& params = {});

// ---- learning-rate schedule -------------------------------------------------

struct PlateauConfig {
  double factor = 0.5;
  std::size_t patience = 10;
  double threshold = 1e-4;
  double lr_min = 1e-6;
};

struct PlateauState {
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  std::size_t cooldown = 0;
};

// Feeds one validation loss. An epoch improves when loss < best * (1 - threshold).
// Once bad_epochs reaches patience the rate is cut to max(lr * factor, lr_min)
// and the next `patience` epochs are a cooldown that counts no bad epochs.
double plateau_step(PlateauState& state, double val_loss, double lr, const PlateauConfig& cfg);

// Replays a full validation history from a fresh state starting at current_lr.
double plateau_schedule(const std::vector<double>& val_history, double current_lr, const PlateauConfig& cfg);

// ---- data -------------------------------------------------------------------

// Uniform draw from the 8 dihedral transforms, applied to both images.
// `chosen` receives the transform index.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>& degraded, const Tensor<T>& clean, Rng& rng,
                                        int* chosen = nullptr);

enum class PatchMode { grid, random };

// Grid: floor(h/size) * floor(w/size) non-overlapping tiles, row-major from the
// top-left corner. Random: `count` crops at uniform valid anchors.
template <typename T>
std::vector<Tensor<T>> extract_patches(const Tensor<T>& image, std::size_t size, PatchMode mode, Rng* rng = nullptr,
                                       std::size_t count = 1);

struct TrainData {
  std::vector<Tensor<float>> clean;
  // Either empty (on-the-fly degradation) or one per clean image.
  std::vector<Tensor<float>> degraded;
  // Optional explicit validation set; otherwise a seeded split of the above.
  std::vector<Tensor<float>> val_clean;
  std::vector<Tensor<float>> val_degraded;
};

// ---- loop -------------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  std::size_t patch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_psnr = 0;
  double val_ssim = 0;
  bool improved = false;

  // "epoch=3 lr=0.002 patch=64 train_loss=... val_loss=... val_psnr=... val_ssim=... improved=1"
  std::string str() const;
};

struct TrainState {
  model::Model<float> model;
  AdamState<float> adam;
  PlateauState plateau;
  double lr = 0;
  std::size_t next_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();

  static TrainState fresh(model::Model<float> model, const TrainConfig& cfg);
  CheckpointExtras to_extras() const;
  static TrainState from_checkpoint(Checkpoint ckpt);
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  // Called when validation loss reaches a new best (state.model is that model).
  std::function<void(const TrainState&)> on_improve;
  // Called at the end of every epoch with the resumable state.
  std::function<void(const TrainState&)> on_state;
  // Return after this many epochs in this call (for interrupted runs).
  std::optional<std::size_t> max_epochs_this_call;
};

// Runs epochs [state.next_epoch, cfg.epochs). Throws TrainingError on a
// non-finite loss, naming the first non-finite tensor on the tape.
std::vector<EpochLog> train_loop(TrainState& state, const TrainData& data, const TrainConfig& cfg,
                                 const TrainHooks& hooks = {});

// Seeded split of item indices into (train, validation).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t count, double val_fraction,
                                                                            std::uint64_t seed);

}  // namespace lpie::trainkit
