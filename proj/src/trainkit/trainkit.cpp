#include "lpie/trainkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace lpie::trainkit {

namespace {

// Sub-stream identifiers for Rng::derive.
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;
constexpr std::uint64_t kSampleStream = 0x73616d70ULL;
constexpr std::uint64_t kValStream = 0x76616c00ULL;
constexpr std::uint64_t kSplitStream = 0x73706c74ULL;

std::vector<PatchStage> parse_schedule(const std::string& key, const std::string& text) {
  std::vector<PatchStage> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError(key, "expected epoch:size pairs, got '" + item + "'");
    const auto epoch = parse_int(key, item.substr(0, colon));
    const auto size = parse_int(key, item.substr(colon + 1));
    if (epoch < 0 || size <= 0) throw ConfigError(key, "stage '" + item + "' must have epoch >= 0 and size > 0");
    out.push_back({static_cast<std::size_t>(epoch), static_cast<std::size_t>(size)});
  }
  return out;
}

std::size_t positive(const std::string& key, std::int64_t v) {
  if (v <= 0) throw ConfigError(key, "must be positive");
  return static_cast<std::size_t>(v);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

// ---- config -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr_min > 0)) throw ConfigError("lr_min", "must be positive");
  if (!(lr0 >= lr_min) || !std::isfinite(lr0)) throw ConfigError("lr0", "must be finite and >= lr_min");
  if (!(plateau_factor > 0 && plateau_factor < 1)) throw ConfigError("plateau_factor", "must lie in (0, 1)");
  if (plateau_patience == 0) throw ConfigError("plateau_patience", "must be positive");
  if (!(plateau_threshold >= 0 && plateau_threshold < 1)) throw ConfigError("plateau_threshold", "must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (patch_size == 0 || patch_size % 4 != 0) throw ConfigError("patch_size", "must be a positive multiple of 4");
  if (patches_per_image == 0) throw ConfigError("patches_per_image", "must be positive");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction", "must lie in [0, 1)");
  for (std::size_t i = 0; i < patch_schedule.size(); ++i) {
    const auto& st = patch_schedule[i];
    if (st.size == 0 || st.size % 4 != 0) throw ConfigError("patch_schedule", "patch sizes must be multiples of 4");
    if (i > 0 && st.epoch <= patch_schedule[i - 1].epoch) {
      throw ConfigError("patch_schedule", "stage epochs must be strictly increasing");
    }
  }
  if (!patch_schedule.empty() && patch_schedule.front().epoch != 0) {
    throw ConfigError("patch_schedule", "first stage must start at epoch 0");
  }
  loss.validate();
  model.validate();
  if (degradation) degradation->validate();
}

std::vector<PatchStage> TrainConfig::effective_schedule() const {
  if (!patch_schedule.empty()) return patch_schedule;
  std::vector<PatchStage> out;
  const std::array<PatchStage, 3> ramp{PatchStage{0, 64}, PatchStage{epochs * 2 / 5, 128},
                                       PatchStage{epochs * 7 / 10, patch_size}};
  for (const auto& st : ramp) {
    const std::size_t size = std::min(st.size, patch_size);
    if (!out.empty() && out.back().epoch == st.epoch) {
      out.back().size = size;
    } else if (out.empty() || out.back().size != size) {
      out.push_back({st.epoch, size});
    }
  }
  return out;
}

std::size_t TrainConfig::patch_size_at(std::size_t epoch) const {
  std::size_t size = 0;
  for (const auto& st : effective_schedule()) {
    if (st.epoch <= epoch) size = st.size;
  }
  return size;
}

void TrainConfig::write(KeyValueText& kv) const {
  kv.set("lr0", lr0);
  kv.set("lr_min", lr_min);
  kv.set("plateau_factor", plateau_factor);
  kv.set("plateau_patience", static_cast<std::int64_t>(plateau_patience));
  kv.set("plateau_threshold", plateau_threshold);
  kv.set("batch_size", static_cast<std::int64_t>(batch_size));
  kv.set("epochs", static_cast<std::int64_t>(epochs));
  kv.set("patch_size", static_cast<std::int64_t>(patch_size));
  std::string sched;
  for (const auto& st : patch_schedule) {
    sched += (sched.empty() ? "" : ",") + std::to_string(st.epoch) + ":" + std::to_string(st.size);
  }
  if (!sched.empty()) kv.set("patch_schedule", sched);
  kv.set("patches_per_image", static_cast<std::int64_t>(patches_per_image));
  kv.set("augment", augment);
  kv.set("val_fraction", val_fraction);
  loss.write(kv);
  kv.set("seed", std::to_string(seed));
  model.write(kv, "model.");
  if (degradation) degradation->write(kv, "degrade.");
}

TrainConfig TrainConfig::read(KeyValueText& kv) {
  TrainConfig c;
  c.lr0 = kv.take_double("lr0", c.lr0);
  c.lr_min = kv.take_double("lr_min", c.lr_min);
  c.plateau_factor = kv.take_double("plateau_factor", c.plateau_factor);
  c.plateau_patience = positive("plateau_patience", kv.take_int("plateau_patience", 10));
  c.plateau_threshold = kv.take_double("plateau_threshold", c.plateau_threshold);
  c.batch_size = positive("batch_size", kv.take_int("batch_size", 4));
  const auto epochs = kv.take_int("epochs", 500);
  if (epochs < 0) throw ConfigError("epochs", "must be >= 0");
  c.epochs = static_cast<std::size_t>(epochs);
  c.patch_size = positive("patch_size", kv.take_int("patch_size", 400));
  if (auto s = kv.take("patch_schedule")) c.patch_schedule = parse_schedule("patch_schedule", *s);
  c.patches_per_image = positive("patches_per_image", kv.take_int("patches_per_image", 1));
  c.augment = kv.take_bool("augment", c.augment);
  c.val_fraction = kv.take_double("val_fraction", c.val_fraction);
  c.loss = objectives::LossWeights::read(kv);
  c.seed = kv.take_u64("seed", c.seed);
  c.model = model::ModelConfig::read(kv, "model.");
  if (auto task = kv.take("degrade.task")) {
    c.degradation = degrade::DegradationConfig::read(kv, "degrade.", degrade::preset(degrade::parse_task(*task)));
  } else {
    degrade::DegradationConfig base;
    degrade::DegradationConfig d = degrade::DegradationConfig::read(kv, "degrade.", base);
    if (!(d == base)) c.degradation = d;
  }
  kv.reject_unconsumed();
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  KeyValueText kv = KeyValueText::load(path);
  return read(kv);
}

// ---- Adam -------------------------------------------------------------------

template <typename T>
void adam_step(model::ParameterSet<T>& weights, const std::vector<Tensor<T>>& grads, AdamState<T>& state, double lr,
               const AdamParams& p) {
  auto& entries = weights.entries();
  if (grads.size() != entries.size()) throw ShapeError("adam_step: gradient count does not match parameters");
  if (state.m.empty()) {
    for (const auto& e : entries) {
      state.m.emplace_back(e.value.shape());
      state.v.emplace_back(e.value.shape());
    }
  }
  if (state.m.size() != entries.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
  ++state.t;
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto w = entries[k].value.data();
    const auto g = grads[k].data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    if (g.size() != w.size() || m.size() != w.size()) {
      throw ShapeError("adam_step: shape mismatch for '" + entries[k].name + "'");
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = p.beta1 * static_cast<double>(m[i]) + (1 - p.beta1) * gi;
      const double vi = p.beta2 * static_cast<double>(v[i]) + (1 - p.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + p.eps));
    }
  }
}

// ---- plateau ----------------------------------------------------------------

double plateau_step(PlateauState& s, double val_loss, double lr, const PlateauConfig& cfg) {
  if (val_loss < s.best * (1 - cfg.threshold) || std::isinf(s.best)) {
    s.best = val_loss;
    s.bad_epochs = 0;
  } else {
    ++s.bad_epochs;
  }
  if (s.cooldown > 0) {
    --s.cooldown;
    s.bad_epochs = 0;
  }
  if (s.bad_epochs >= cfg.patience) {
    lr = std::max(lr * cfg.factor, cfg.lr_min);
    s.cooldown = cfg.patience;
    s.bad_epochs = 0;
  }
  return lr;
}

double plateau_schedule(const std::vector<double>& val_history, double current_lr, const PlateauConfig& cfg) {
  PlateauState s;
  for (double v : val_history) current_lr = plateau_step(s, v, current_lr, cfg);
  return current_lr;
}

// ---- data -------------------------------------------------------------------

template <typename T>
std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>& degraded, const Tensor<T>& clean, Rng& rng, int* chosen) {
  const int t = static_cast<int>(rng.below(kDihedralCount));
  if (chosen != nullptr) *chosen = t;
  return {dihedral(degraded, t), dihedral(clean, t)};
}

template <typename T>
std::vector<Tensor<T>> extract_patches(const Tensor<T>& image, std::size_t size, PatchMode mode, Rng* rng,
                                       std::size_t count) {
  const Shape& s = image.shape();
  if (size == 0 || size > s.h || size > s.w) {
    throw ShapeError("extract_patches: patch size " + std::to_string(size) + " does not fit image " + s.str());
  }
  std::vector<Tensor<T>> out;
  if (mode == PatchMode::grid) {
    for (std::size_t y = 0; y + size <= s.h; y += size) {
      for (std::size_t x = 0; x + size <= s.w; x += size) out.push_back(crop(image, y, x, size, size));
    }
    return out;
  }
  if (rng == nullptr) throw std::invalid_argument("extract_patches: random mode needs an rng");
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t y = rng->below(s.h - size + 1);
    const std::size_t x = rng->below(s.w - size + 1);
    out.push_back(crop(image, y, x, size, size));
  }
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t count, double val_fraction,
                                                                            std::uint64_t seed) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(count)));
  if (val_fraction > 0 && count >= 2) n_val = std::max<std::size_t>(n_val, 1);
  n_val = std::min(n_val, count > 0 ? count - 1 : 0);
  Rng rng = Rng::derive(seed, {kSplitStream});
  rng.shuffle(idx.begin(), idx.end());
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

// ---- state ------------------------------------------------------------------

std::string EpochLog::str() const {
  std::ostringstream os;
  os << "epoch=" << epoch << " lr=" << format_double(lr) << " patch=" << patch << " train_loss=" << fmt(train_loss)
     << " val_loss=" << fmt(val_loss) << " val_psnr=" << fmt(val_psnr) << " val_ssim=" << fmt(val_ssim)
     << " improved=" << (improved ? 1 : 0);
  return os.str();
}

TrainState TrainState::fresh(model::Model<float> model, const TrainConfig& cfg) {
  TrainState s{std::move(model), {}, {}, cfg.lr0, 0, std::numeric_limits<double>::infinity()};
  return s;
}

CheckpointExtras TrainState::to_extras() const {
  CheckpointExtras e;
  e.step = adam.t;
  e.state = {{"next_epoch", std::to_string(next_epoch)},
             {"lr", format_double(lr)},
             {"best_val", format_double(best_val)},
             {"plateau.best", format_double(plateau.best)},
             {"plateau.bad_epochs", std::to_string(plateau.bad_epochs)},
             {"plateau.cooldown", std::to_string(plateau.cooldown)}};
  const auto& entries = model.params().entries();
  for (std::size_t k = 0; k < adam.m.size(); ++k) {
    e.tensors.add("adam.m." + entries[k].name, adam.m[k]);
    e.tensors.add("adam.v." + entries[k].name, adam.v[k]);
  }
  return e;
}

TrainState TrainState::from_checkpoint(Checkpoint ckpt) {
  const auto get = [&](const std::string& key) -> std::string {
    const std::string* v = ckpt.extras.find_state(key);
    if (v == nullptr) throw FormatError(FormatError::Kind::invalid, "checkpoint lacks training state '" + key + "'");
    return *v;
  };
  KeyValueText kv;
  for (const char* key : {"next_epoch", "lr", "best_val", "plateau.best", "plateau.bad_epochs", "plateau.cooldown"}) {
    kv.set(key, get(key));
  }
  TrainState s{std::move(ckpt.model), {}, {}, 0, 0, 0};
  try {
    s.next_epoch = kv.take_u64("next_epoch", 0);
    s.lr = kv.take_double("lr", 0);
    s.best_val = kv.take_double("best_val", 0);
    s.plateau.best = kv.take_double("plateau.best", 0);
    s.plateau.bad_epochs = kv.take_u64("plateau.bad_epochs", 0);
    s.plateau.cooldown = kv.take_u64("plateau.cooldown", 0);
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::invalid, std::string("checkpoint training state: ") + e.what());
  }
  s.adam.t = ckpt.extras.step;
  if (s.adam.t > 0) {
    for (const auto& p : s.model.params().entries()) {
      for (const auto& [prefix, dst] : {std::pair{"adam.m.", &s.adam.m}, std::pair{"adam.v.", &s.adam.v}}) {
        const std::string name = prefix + p.name;
        if (!ckpt.extras.tensors.contains(name)) {
          throw FormatError(FormatError::Kind::invalid, "checkpoint lacks optimizer tensor '" + name + "'");
        }
        const auto& t = ckpt.extras.tensors.at(name);
        if (t.shape() != p.value.shape()) {
          throw FormatError(FormatError::Kind::mismatch, "optimizer tensor '" + name + "' has the wrong shape");
        }
        dst->push_back(t);
      }
    }
  }
  return s;
}

// ---- loop -------------------------------------------------------------------

namespace {

struct Evaluation {
  double loss = 0, psnr = 0, ssim = 0;
};

Evaluation evaluate(const model::Model<float>& model, const std::vector<Tensor<float>>& degraded,
                    const std::vector<Tensor<float>>& clean, const objectives::LossWeights& w) {
  Evaluation e;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const Tensor<float> out = model.forward(degraded[i]);
    e.loss += objectives::combined_loss(out, clean[i], w);
    e.psnr += std::min(objectives::psnr(out, clean[i]), 100.0);
    e.ssim += objectives::ssim(out, clean[i]);
  }
  const auto n = static_cast<double>(clean.size());
  return {e.loss / n, e.psnr / n, e.ssim / n};
}

std::string describe_non_finite(const ad::Tape<float>& tape) {
  const ad::Node<float>* n = tape.first_non_finite();
  if (n == nullptr) return "no non-finite tensor recorded";
  std::string s = std::string("first non-finite tensor: op=") + n->op;
  if (!n->label.empty()) s += " name=" + n->label;
  return s + " shape=" + n->value.shape().str();
}

}  // namespace

std::vector<EpochLog> train_loop(TrainState& state, const TrainData& data, const TrainConfig& cfg,
                                 const TrainHooks& hooks) {
  cfg.validate();
  if (data.clean.empty()) throw std::invalid_argument("train_loop: empty dataset");
  const bool paired = !data.degraded.empty();
  if (paired && data.degraded.size() != data.clean.size()) {
    throw std::invalid_argument("train_loop: degraded/clean counts differ");
  }
  if (!paired && !cfg.degradation) {
    throw std::invalid_argument("train_loop: no degraded images and no degradation config");
  }
  for (std::size_t i = 0; i < data.clean.size(); ++i) {
    if (data.clean[i].shape().n != 1 || data.clean[i].shape().c != 3) {
      throw ShapeError("train_loop: image " + std::to_string(i) + " must be 1x3xHxW");
    }
    if (paired && data.degraded[i].shape() != data.clean[i].shape()) {
      throw ShapeError("train_loop: pair " + std::to_string(i) + " has mismatched shapes");
    }
  }

  // Resolve training and validation sets.
  std::vector<std::size_t> train_idx;
  std::vector<Tensor<float>> val_clean, val_degraded;
  if (!data.val_clean.empty()) {
    train_idx.resize(data.clean.size());
    std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
    val_clean = data.val_clean;
    val_degraded = data.val_degraded;
  } else {
    auto [tr, va] = split_indices(data.clean.size(), cfg.val_fraction, cfg.seed);
    train_idx = std::move(tr);
    for (std::size_t i : va) {
      val_clean.push_back(data.clean[i]);
      if (paired) val_degraded.push_back(data.degraded[i]);
    }
  }
  if (val_degraded.empty()) {
    for (std::size_t i = 0; i < val_clean.size(); ++i) {
      Rng rng = Rng::derive(cfg.seed, {kValStream, i});
      val_degraded.push_back(degrade::apply(val_clean[i], *cfg.degradation, rng));
    }
  }
  if (val_degraded.size() != val_clean.size()) throw std::invalid_argument("train_loop: validation pairs mismatch");

  std::size_t max_patch_h = SIZE_MAX, max_patch_w = SIZE_MAX;
  for (std::size_t i : train_idx) {
    max_patch_h = std::min(max_patch_h, data.clean[i].shape().h / 4 * 4);
    max_patch_w = std::min(max_patch_w, data.clean[i].shape().w / 4 * 4);
  }
  const std::size_t max_patch = std::min(max_patch_h, max_patch_w);
  if (max_patch < 4) throw ShapeError("train_loop: training images must be at least 4x4");

  const PlateauConfig plateau_cfg{cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_threshold, cfg.lr_min};
  std::vector<EpochLog> log;
  std::size_t run = 0;
  while (state.next_epoch < cfg.epochs) {
    if (hooks.max_epochs_this_call && run >= *hooks.max_epochs_this_call) break;
    const std::size_t epoch = state.next_epoch;
    const std::size_t patch = std::min(cfg.patch_size_at(epoch), max_patch);

    // Sample list: (image index, patch slot) in a per-epoch shuffled order.
    std::vector<std::pair<std::size_t, std::size_t>> samples;
    for (std::size_t i : train_idx) {
      for (std::size_t j = 0; j < cfg.patches_per_image; ++j) samples.emplace_back(i, j);
    }
    Rng shuffle_rng = Rng::derive(cfg.seed, {kShuffleStream, epoch});
    shuffle_rng.shuffle(samples.begin(), samples.end());

    double loss_sum = 0;
    std::size_t loss_count = 0;
    for (std::size_t b0 = 0; b0 < samples.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(samples.size(), b0 + cfg.batch_size);
      std::vector<Tensor<float>> inputs, targets;
      for (std::size_t k = b0; k < b1; ++k) {
        const auto [i, j] = samples[k];
        Rng rng = Rng::derive(cfg.seed, {kSampleStream, epoch, i, j});
        const Shape& s = data.clean[i].shape();
        const std::size_t y = rng.below(s.h - patch + 1);
        const std::size_t x = rng.below(s.w - patch + 1);
        Tensor<float> clean = crop(data.clean[i], y, x, patch, patch);
        Tensor<float> degraded = paired ? crop(data.degraded[i], y, x, patch, patch) : Tensor<float>();
        if (cfg.augment) {
          const int t = static_cast<int>(rng.below(kDihedralCount));
          clean = dihedral(clean, t);
          if (paired) degraded = dihedral(degraded, t);
        }
        if (!paired) degraded = degrade::apply(clean, *cfg.degradation, rng);
        inputs.push_back(std::move(degraded));
        targets.push_back(std::move(clean));
      }
      ad::Tape<float> tape(true);
      auto [bound, vars] = state.model.bind(tape);
      ad::Var<float> in = tape.constant(stack_batch<float>(inputs));
      ad::Var<float> target = tape.constant(stack_batch<float>(targets));
      ad::Var<float> out = state.model.forward(in, bound);
      ad::Var<float> loss = objectives::combined_loss(out, target, cfg.loss);
      const double lv = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lv)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(b0 / cfg.batch_size) + "; " + describe_non_finite(tape));
      }
      tape.backward(loss);
      std::vector<Tensor<float>> grads;
      grads.reserve(vars.size());
      for (const auto& v : vars) grads.push_back(v.grad());
      for (std::size_t k = 0; k < grads.size(); ++k) {
        if (!grads[k].all_finite()) {
          throw TrainingError("non-finite gradient at epoch " + std::to_string(epoch) + " for parameter '" +
                              state.model.params().entries()[k].name + "'");
        }
      }
      adam_step(state.model.params(), grads, state.adam, state.lr);
      loss_sum += lv * static_cast<double>(b1 - b0);
      loss_count += b1 - b0;
    }

    EpochLog row;
    row.epoch = epoch;
    row.lr = state.lr;
    row.patch = patch;
    row.train_loss = loss_sum / static_cast<double>(loss_count);
    if (!val_clean.empty()) {
      const Evaluation ev = evaluate(state.model, val_degraded, val_clean, cfg.loss);
      row.val_loss = ev.loss;
      row.val_psnr = ev.psnr;
      row.val_ssim = ev.ssim;
    } else {
      row.val_loss = row.train_loss;
    }
    if (!std::isfinite(row.val_loss)) {
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    row.improved = row.val_loss < state.best_val;
    if (row.improved) state.best_val = row.val_loss;
    state.lr = plateau_step(state.plateau, row.val_loss, state.lr, plateau_cfg);
    state.next_epoch = epoch + 1;
    ++run;
    log.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);
    if (row.improved && hooks.on_improve) hooks.on_improve(state);
    if (hooks.on_state) hooks.on_state(state);
  }
  return log;
}

template void adam_step(model::ParameterSet<float>&, const std::vector<Tensor<float>>&, AdamState<float>&, double,
                        const AdamParams&);
template void adam_step(model::ParameterSet<double>&, const std::vector<Tensor<double>>&, AdamState<double>&, double,
                        const AdamParams&);
template std::pair<Tensor<float>, Tensor<float>> augment(const Tensor<float>&, const Tensor<float>&, Rng&, int*);
template std::pair<Tensor<double>, Tensor<double>> augment(const Tensor<double>&, const Tensor<double>&, Rng&, int*);
template std::vector<Tensor<float>> extract_patches(const Tensor<float>&, std::size_t, PatchMode, Rng*, std::size_t);
template std::vector<Tensor<double>> extract_patches(const Tensor<double>&, std::size_t, PatchMode, Rng*,
                                                     std::size_t);

}  // namespace lpie::trainkit
