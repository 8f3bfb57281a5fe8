#include "lucyd/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "lucyd/ops.hpp"

namespace lucyd {

namespace {

constexpr std::uint64_t kSamplingSalt = 101;

Volume scaled(const Volume& v, double factor) {
  Volume out = v;
  for (float& x : out.data()) {
    x = static_cast<float>(static_cast<double>(x) * factor);
  }
  return out;
}

int padded_extent(int n) { return std::max(8, n + (n % 2)); }

Volume pad_replicate(const Volume& v, int d, int h, int w) {
  const Shape s = v.shape();
  if (s.d == d && s.h == h && s.w == w) return v;
  Volume out(Shape{1, d, h, w});
  for (int z = 0; z < d; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        out.at(0, z, y, x) = v.at(0, std::min(z, s.d - 1), std::min(y, s.h - 1),
                                  std::min(x, s.w - 1));
      }
  return out;
}

std::vector<int> tile_starts(int n, int t, int overlap) {
  if (n <= t) return {0};
  std::vector<int> starts;
  for (int s = 0;; s += t - overlap) {
    if (s + t >= n) {
      starts.push_back(n - t);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

// On every side shared with another tile the outer overlap/4 voxels get zero
// weight (they see the zero padding of the tile border), then a linear ramp
// runs over the middle half of the overlap.
std::vector<double> tile_weights(int start, int size, int n, int overlap) {
  const int trim = overlap / 4;
  const int ramp = overlap - 2 * trim;
  std::vector<double> w(static_cast<std::size_t>(size), 1.0);
  for (int i = 0; i < size; ++i) {
    if (start > 0) w[i] = std::min(w[i], std::max(0.0, (i - trim + 1.0) / (ramp + 1.0)));
    if (start + size < n) w[i] = std::min(w[i], std::max(0.0, (size - i - trim) / (ramp + 1.0)));
  }
  return w;
}

}  // namespace

Volume normalized(const Volume& v) { return scaled(v, 1.0 / kIntensityScale); }
Volume denormalized(const Volume& v) { return scaled(v, kIntensityScale); }

template <typename T>
double loss(const BasicVolume<T>& restored, const BasicVolume<T>& truth,
            const SsimParams& params) {
  const double m = mse(restored, truth);
  const double s = ssim3d(restored, truth, params);
  return m - std::log((1.0 + s) / 2.0);
}

template <typename T>
VarId loss(Tape<T>& tape, VarId restored, VarId truth,
           const SsimParams& params) {
  const VarId m = mse(tape, restored, truth);
  const VarId s = ssim3d(tape, restored, truth, params);
  const double mv = static_cast<double>(tape.value(m)[0]);
  const double sv = static_cast<double>(tape.value(s)[0]);
  const double value = mv - std::log((1.0 + sv) / 2.0);
  return tape.record(
      OpKind::loss_combine, BasicVolume<T>(Shape{1, 1, 1, 1}, static_cast<T>(value)),
      {m, s}, {},
      [m, s](Tape<T>& t, const BasicVolume<T>& grad) {
        const double g = static_cast<double>(grad[0]);
        if (t.requires_grad(m)) t.grad_buffer(m)[0] += static_cast<T>(g);
        if (t.requires_grad(s)) {
          const double sv = static_cast<double>(t.value(s)[0]);
          t.grad_buffer(s)[0] += static_cast<T>(-g / (1.0 + sv));
        }
      },
      "loss");
}

void check_train_config(const TrainConfig& cfg) {
  if (!(cfg.lr > 0)) fail_usage("learning rate must be positive");
  if (cfg.epochs < 1) fail_usage("epochs must be positive");
  if (cfg.batch < 1) fail_usage("batch size must be positive");
  if (cfg.patches_per_epoch < 1) fail_usage("patches per epoch must be positive");
  if (!(cfg.beta1 > 0 && cfg.beta1 < 1 && cfg.beta2 > 0 && cfg.beta2 < 1)) {
    fail_usage("Adam betas must lie in (0, 1)");
  }
  if (!(cfg.adam_eps > 0)) fail_usage("Adam epsilon must be positive");
  if (cfg.checkpoint_every < 0 || cfg.val_limit < 0) {
    fail_usage("checkpoint cadence and validation limit must be non-negative");
  }
  const PatchShape& p = cfg.patch;
  if (p.d <= 0 || p.h <= 0 || p.w <= 0 || p.d % 2 || p.h % 2 || p.w % 2) {
    fail_usage("patch dims must be positive and even");
  }
  // The loss needs a full SSIM window inside the patch.
  const int window = SsimParams{}.window;
  if (p.d < window || p.h < window || p.w < window) {
    fail_usage("patch dims must be at least " + std::to_string(window));
  }
}

AdamState zero_adam_state(const ModelParams<float>& params) {
  AdamState s;
  for (const auto& k : params.kernels) {
    s.m.emplace_back(k.c_out, k.c_in, k.kd, k.kh, k.kw);
    s.v.emplace_back(k.c_out, k.c_in, k.kd, k.kh, k.kw);
  }
  return s;
}

std::string rng_tag(std::uint64_t seed, int epoch) {
  return "mt19937_64:seed=" + std::to_string(seed) +
         ":epoch=" + std::to_string(epoch);
}

double train_step(ModelParams<float>& params, AdamState& adam,
                  const TrainConfig& cfg, std::span<const VolumePair> batch) {
  if (batch.empty()) fail_usage("train_step: empty batch");
  const std::size_t n_kernels = params.kernels.size();
  if (adam.m.size() != n_kernels || adam.v.size() != n_kernels) {
    fail_usage("train_step: optimizer state does not match the model");
  }
  std::vector<std::vector<double>> gw(n_kernels), gb(n_kernels);
  for (std::size_t k = 0; k < n_kernels; ++k) {
    gw[k].assign(params.kernels[k].weights.size(), 0.0);
    gb[k].assign(params.kernels[k].bias.size(), 0.0);
  }
  double total = 0.0;
  for (const VolumePair& pair : batch) {
    Tape<float> tape;
    const auto ids = bind_params(tape, params);
    const VarId y = tape.constant(pair.degraded, "y");
    const auto out = forward(tape, ids, params.config, y);
    const VarId truth = tape.constant(pair.truth, "truth");
    const VarId l = loss(tape, out.restored, truth);
    const double value = static_cast<double>(tape.value(l)[0]);
    if (!std::isfinite(value)) {
      fail_numerical("non-finite training loss; first non-finite tensor: " +
                     tape.first_non_finite().value_or("loss (loss_combine)"));
    }
    tape.backward(l);
    for (std::size_t k = 0; k < n_kernels; ++k) {
      const Kernel3d<float> g = tape.param_grad(ids[k]);
      for (std::size_t i = 0; i < g.weights.size(); ++i) gw[k][i] += g.weights[i];
      for (std::size_t i = 0; i < g.bias.size(); ++i) gb[k][i] += g.bias[i];
    }
    total += value;
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  adam.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam.step));
  auto update = [&](std::vector<float>& p, std::vector<float>& m,
                    std::vector<float>& v, const std::vector<double>& g,
                    const std::string& name) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] * inv;
      if (!std::isfinite(gi)) {
        fail_numerical("non-finite gradient for parameter " + name);
      }
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double step = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
      p[i] = static_cast<float>(static_cast<double>(p[i]) - step);
    }
  };
  for (std::size_t k = 0; k < n_kernels; ++k) {
    auto& kernel = params.kernels[k];
    update(kernel.weights, adam.m[k].weights, adam.v[k].weights, gw[k],
           params.names[k] + ".weight");
    update(kernel.bias, adam.m[k].bias, adam.v[k].bias, gb[k],
           params.names[k] + ".bias");
  }
  return total * inv;
}

Scores validate(const ModelParams<float>& params,
                std::span<const VolumePair> pairs) {
  if (pairs.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return Scores{nan, nan};
  }
  Scores acc;
  for (const VolumePair& p : pairs) {
    const Shape s = p.degraded.shape();
    const Volume out = infer(params, p.degraded, TileSpec{s.d + s.d % 2,
                                                          s.h + s.h % 2,
                                                          s.w + s.w % 2, 8});
    acc.ssim += ssim3d(out, p.truth);
    acc.psnr += psnr(out, p.truth);
  }
  acc.ssim /= static_cast<double>(pairs.size());
  acc.psnr /= static_cast<double>(pairs.size());
  return acc;
}

Checkpoint train(const TrainConfig& cfg, const TrainingData& data,
                 const Checkpoint* resume, const TrainHooks& hooks) {
  check_train_config(cfg);
  if (data.train.empty()) fail_data("training data is empty");

  Checkpoint ck;
  if (resume) {
    if (!(resume->params.config == cfg.model)) {
      fail_usage("resume checkpoint has a different model config");
    }
    if (resume->epoch >= cfg.epochs) {
      fail_usage("resume checkpoint already completed " +
                 std::to_string(resume->epoch) + " epochs");
    }
    ck = *resume;
    ck.config = cfg;
  } else {
    ck.params = init_params(cfg.seed, cfg.model);
    ck.adam = zero_adam_state(ck.params);
    ck.config = cfg;
    ck.rng_tag = rng_tag(cfg.seed, 0);
  }

  std::span<const VolumePair> val(data.val);
  if (cfg.val_limit > 0 && val.size() > static_cast<std::size_t>(cfg.val_limit)) {
    val = val.first(static_cast<std::size_t>(cfg.val_limit));
  }

  for (int e = ck.epoch + 1; e <= cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto samples =
        sample_patches(data.train, cfg.patch, cfg.patches_per_epoch,
                       derive_seed(cfg.seed, static_cast<std::uint64_t>(e),
                                   kSamplingSalt));
    std::vector<VolumePair> batch;
    double acc = 0.0;
    for (std::size_t i = 0; i < samples.size(); i += batch.size()) {
      batch.clear();
      for (std::size_t j = i;
           j < samples.size() && batch.size() < static_cast<std::size_t>(cfg.batch);
           ++j) {
        batch.push_back(samples[j].patch);
      }
      acc += train_step(ck.params, ck.adam, cfg, batch) *
             static_cast<double>(batch.size());
    }
    const Scores s = validate(ck.params, val);
    const EpochRecord record{e, acc / static_cast<double>(samples.size()),
                             s.ssim, s.psnr};
    ck.history.push_back(record);
    ck.epoch = e;
    ck.rng_tag = rng_tag(cfg.seed, e);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (hooks.on_epoch) hooks.on_epoch(record, wall);
    if (cfg.checkpoint_every > 0 && e % cfg.checkpoint_every == 0 &&
        hooks.on_checkpoint) {
      hooks.on_checkpoint(ck);
    }
  }
  return ck;
}

void check_tile_spec(const TileSpec& tile) {
  if (tile.d < 8 || tile.h < 8 || tile.w < 8 || tile.d % 2 || tile.h % 2 ||
      tile.w % 2) {
    fail_usage("tile dims must be even and at least 8");
  }
  if (tile.overlap < 8) fail_usage("tile overlap must be at least 8");
  if (tile.overlap >= std::min({tile.d, tile.h, tile.w})) {
    fail_usage("tile overlap must be smaller than every tile dim");
  }
}

Volume infer(const ModelParams<float>& params, const Volume& y,
             const TileSpec& tile) {
  check_tile_spec(tile);
  const Shape s = y.shape();
  if (s.c != 1) fail_usage("infer: expected a single-channel volume, got " + s.str());
  const Volume yp = pad_replicate(y, padded_extent(s.d), padded_extent(s.h),
                                  padded_extent(s.w));
  const Shape ps = yp.shape();
  const int td = std::min(tile.d, ps.d);
  const int th = std::min(tile.h, ps.h);
  const int tw = std::min(tile.w, ps.w);
  const auto zs = tile_starts(ps.d, td, tile.overlap);
  const auto ys = tile_starts(ps.h, th, tile.overlap);
  const auto xs = tile_starts(ps.w, tw, tile.overlap);

  Volume out(ps);
  if (zs.size() == 1 && ys.size() == 1 && xs.size() == 1) {
    out = forward(params, yp).restored;
  } else {
    std::vector<double> acc(ps.numel(), 0.0), wsum(ps.numel(), 0.0);
    for (int z0 : zs)
      for (int y0 : ys)
        for (int x0 : xs) {
          const Volume part =
              forward(params, crop(yp, z0, y0, x0, PatchShape{td, th, tw}))
                  .restored;
          const auto wz = tile_weights(z0, td, ps.d, tile.overlap);
          const auto wy = tile_weights(y0, th, ps.h, tile.overlap);
          const auto wx = tile_weights(x0, tw, ps.w, tile.overlap);
          for (int z = 0; z < td; ++z)
            for (int yy = 0; yy < th; ++yy)
              for (int x = 0; x < tw; ++x) {
                const double w = wz[z] * wy[yy] * wx[x];
                const std::size_t i = out.index(0, z0 + z, y0 + yy, x0 + x);
                acc[i] += w * static_cast<double>(part.at(0, z, yy, x));
                wsum[i] += w;
              }
        }
    for (std::size_t i = 0; i < acc.size(); ++i) {
      out[i] = static_cast<float>(acc[i] / wsum[i]);
    }
  }

  Volume result = (ps == s) ? std::move(out)
                            : crop(out, 0, 0, 0, PatchShape{s.d, s.h, s.w});
  for (float& v : result.data()) v = std::max(v, 0.0f);
  return result;
}

template double loss(const BasicVolume<float>&, const BasicVolume<float>&,
                     const SsimParams&);
template double loss(const BasicVolume<double>&, const BasicVolume<double>&,
                     const SsimParams&);
template VarId loss(Tape<float>&, VarId, VarId, const SsimParams&);
template VarId loss(Tape<double>&, VarId, VarId, const SsimParams&);

}  // namespace lucyd
