#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lucyd/metrics.hpp"
#include "lucyd/network.hpp"
#include "lucyd/simulate.hpp"
#include "lucyd/tape.hpp"

namespace lucyd {

/// Ground truths are stored on this scale; the network and the metrics work
/// on volumes divided by it.
inline constexpr double kIntensityScale = 255.0;

Volume normalized(const Volume& v);
Volume denormalized(const Volume& v);

/// MSE(x', x) - ln((1 + SSIM(x', x)) / 2).
template <typename T>
double loss(const BasicVolume<T>& restored, const BasicVolume<T>& truth,
            const SsimParams& params = {});

template <typename T>
VarId loss(Tape<T>& tape, VarId restored, VarId truth,
           const SsimParams& params = {});

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 20;
  int batch = 4;
  int patches_per_epoch = 200;
  PatchShape patch{32, 64, 64};
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Emit a checkpoint every this many epochs; 0 disables.
  int checkpoint_every = 0;
  /// Validation pairs scored per epoch; 0 scores all of them.
  int val_limit = 0;
  ModelConfig model;

  bool operator==(const TrainConfig&) const = default;
};

void check_train_config(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  /// NaN when there is no validation data.
  double val_ssim = 0.0;
  double val_psnr = 0.0;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Kernel3d<float>> m;
  std::vector<Kernel3d<float>> v;

  bool operator==(const AdamState&) const = default;
};

AdamState zero_adam_state(const ModelParams<float>& params);

struct Checkpoint {
  ModelParams<float> params;
  TrainConfig config;
  /// Number of completed epochs.
  int epoch = 0;
  /// Position of the sampling streams, which are derived from (seed, epoch).
  std::string rng_tag;
  std::vector<EpochRecord> history;
  AdamState adam;
};

std::string rng_tag(std::uint64_t seed, int epoch);

/// Normalized training material.
struct TrainingData {
  std::vector<VolumePair> train;
  std::vector<VolumePair> val;
};

struct TrainHooks {
  std::function<void(const EpochRecord&, double wall_seconds)> on_epoch;
  std::function<void(const Checkpoint&)> on_checkpoint;
};

/// Loss and gradients averaged over `batch`, then one Adam update. Returns
/// the mean loss before the update.
double train_step(ModelParams<float>& params, AdamState& adam,
                  const TrainConfig& cfg, std::span<const VolumePair> batch);

/// Runs epochs `resume.epoch + 1 .. cfg.epochs`. Patches of epoch e are drawn
/// from a stream derived from (cfg.seed, e), so a resumed run reproduces an
/// uninterrupted one.
Checkpoint train(const TrainConfig& cfg, const TrainingData& data,
                 const Checkpoint* resume = nullptr,
                 const TrainHooks& hooks = {});

/// Mean SSIM and PSNR of the model on normalized pairs, one volume at a time.
struct Scores {
  double ssim = 0.0;
  double psnr = 0.0;
};
Scores validate(const ModelParams<float>& params,
                std::span<const VolumePair> pairs);

struct TileSpec {
  int d = 64;
  int h = 64;
  int w = 64;
  int overlap = 8;
};

void check_tile_spec(const TileSpec& tile);

/// Whole-volume restoration of a normalized volume. Odd dims are padded by
/// edge replication and cropped back; volumes larger than the tile are
/// split into overlapping tiles blended with linear ramps across the middle
/// half of each overlap. The result is clamped at zero.
Volume infer(const ModelParams<float>& params, const Volume& y,
             const TileSpec& tile = {});

}  // namespace lucyd
