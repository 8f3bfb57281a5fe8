#include "doctest.h"

#include <cmath>
#include <set>

#include "lucyd/metrics.hpp"
#include "lucyd/network.hpp"
#include "lucyd/simulate.hpp"
#include "lucyd/training.hpp"
#include "support.hpp"

using namespace lucyd;
using lucyd::test::max_abs_diff;
using lucyd::test::random_volume;

namespace {

bool all_finite(const Volume& v) {
  for (float x : v.storage()) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

ModelParams<float> randomized(std::uint64_t seed) {
  ModelParams<float> p = init_params(seed);
  std::mt19937_64 rng(seed + 1000);
  std::uniform_real_distribution<float> u(-0.1f, 0.1f);
  for (auto& k : p.kernels)
    for (float& b : k.bias) b = u(rng);
  return p;
}

/// Normalized degraded/truth pairs cut from mixed phantoms.
std::vector<VolumePair> pairs(int n, int side, std::uint64_t seed) {
  std::vector<VolumePair> out;
  for (int i = 0; i < n; ++i) {
    const Volume x = generate_mixed_phantom(side, side, side, seed + i);
    const Volume y = degrade(x, DegradationSpec{1.2, std::nullopt, 15.0, seed + 100 + i});
    out.push_back(VolumePair{normalized(y), normalized(x)});
  }
  return out;
}

double set_loss(const ModelParams<float>& p, const std::vector<VolumePair>& set) {
  double s = 0.0;
  for (const auto& pr : set) s += loss(forward(p, pr.degraded).restored, pr.truth);
  return s / static_cast<double>(set.size());
}

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 2;
  cfg.patches_per_epoch = 4;
  cfg.patch = PatchShape{16, 16, 16};
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("layer topology") {
  const auto specs = layer_specs(ModelConfig{});
  std::set<std::string_view> names;
  for (const auto& s : specs) names.insert(s.name);
  CHECK(names.size() == kLayerCount);
  const ModelParams<float> p = zero_params();
  REQUIRE(p.kernels.size() == kLayerCount);
  for (std::size_t i = 0; i < kLayerCount; ++i) {
    CHECK(p.names[i] == specs[i].name);
    CHECK(p.kernels[i].c_in == specs[i].c_in);
    CHECK(p.kernels[i].c_out == specs[i].c_out);
    CHECK(p.kernels[i].kd % 2 == 1);
  }
  CHECK(p[Layer::mask].c_out == 1);
  CHECK_FALSE(specs[static_cast<std::size_t>(Layer::mask)].activated);
  CHECK_FALSE(specs[static_cast<std::size_t>(Layer::bp_refine)].activated);
  CHECK(p[Layer::ff1_fuse].kd == 1);
  CHECK(p[Layer::ff2_fuse].c_in == 12);
}

TEST_CASE("forward preserves shape for even inputs") {
  const ModelParams<float> p = randomized(1);
  for (Shape s : {Shape{1, 8, 8, 8}, Shape{1, 8, 10, 12}, Shape{1, 12, 16, 14}, Shape{1, 16, 8, 20}}) {
    const auto out = forward(p, random_volume(s, 2, 0.0, 1.0));
    CHECK(out.restored.shape() == s);
    CHECK(out.estimate.shape() == s);
    CHECK(out.update.shape() == s);
    CHECK(out.mask.shape() == s);
  }
}

TEST_CASE("forward on a 32x64x64 training patch") {
  const auto out = forward(init_params(3), random_volume(Shape{1, 32, 64, 64}, 4, 0.0, 1.0));
  CHECK(out.restored.shape() == Shape{1, 32, 64, 64});
  CHECK(out.mask.shape() == Shape{1, 32, 64, 64});
}

TEST_CASE("forward rejects odd, small or multi-channel input") {
  const ModelParams<float> p = init_params(0);
  CHECK_THROWS_AS(forward(p, Volume(Shape{1, 8, 9, 8})), Error);
  CHECK_THROWS_AS(forward(p, Volume(Shape{1, 6, 8, 8})), Error);
  CHECK_THROWS_AS(forward(p, Volume(Shape{2, 8, 8, 8})), Error);
}

TEST_CASE("zero weights trace") {
  const Volume y = random_volume(Shape{1, 8, 8, 8}, 5, 0.0, 1.0);
  const auto out = forward(zero_params(), y);
  CHECK(out.estimate == y);
  for (float v : out.mask.storage()) CHECK(v == 0.0f);
  for (float v : out.update.storage()) CHECK(v == 0.0f);
  for (float v : out.restored.storage()) CHECK(v == 0.0f);
  CHECK(all_finite(out.restored));
}

TEST_CASE("returned tensors satisfy the estimate and RL-multiply identities") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto out = forward(randomized(seed), random_volume(Shape{1, 12, 16, 16}, seed, 0.0, 1.0));
    const Volume y = random_volume(Shape{1, 12, 16, 16}, seed, 0.0, 1.0);
    double e3 = 0.0, e5 = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      e3 = std::max(e3, std::abs(static_cast<double>(out.estimate[i]) - y[i] - out.mask[i]));
      e5 = std::max(e5, std::abs(static_cast<double>(out.restored[i]) -
                                 static_cast<double>(out.estimate[i]) * out.update[i]));
    }
    CHECK(e3 <= 1e-6);
    CHECK(e5 <= 1e-6);
  }
}

TEST_CASE("taped forward matches the plain forward") {
  const ModelParams<float> p = randomized(4);
  const Volume y = random_volume(Shape{1, 8, 12, 8}, 6, 0.0, 1.0);
  Tape<float> tape;
  const auto ids = bind_params(tape, p);
  const auto out = forward(tape, ids, p.config, tape.constant(y));
  CHECK(tape.value(out.restored) == forward(p, y).restored);
}

TEST_CASE("ffblock") {
  const ModelParams<float> p = randomized(7);
  const Volume shallow = random_volume(Shape{4, 8, 8, 8}, 8);
  const Volume deep = random_volume(Shape{8, 4, 4, 4}, 9);
  CHECK(ffblock(p, shallow, deep, 1).shape() == Shape{4, 8, 8, 8});
  CHECK(ffblock(p, shallow, deep, 2).shape() == Shape{8, 4, 4, 4});
  for (float v : ffblock(zero_params(), shallow, deep, 1).storage()) CHECK(v == 0.0f);
  const Volume z2 = ffblock(zero_params(), shallow, deep, 2);
  for (float v : z2.storage()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(ffblock(p, shallow, random_volume(Shape{8, 3, 4, 4}, 1), 1), Error);
}

TEST_CASE("loss identities") {
  const Volume x = random_volume(Shape{1, 12, 12, 12}, 10, 0.0, 1.0);
  CHECK(std::abs(loss(x, x)) <= 1e-7);

  const Volume a = random_volume(Shape{1, 12, 12, 12}, 11, 0.0, 1.0);
  const double m = mse(a, x);
  const double s = ssim3d(a, x);
  CHECK(loss(a, x) == doctest::Approx(m - std::log((1.0 + s) / 2.0)).epsilon(1e-12));
  // At SSIM = 0 the structural term is ln 2.
  CHECK(m - std::log((1.0 + 0.0) / 2.0) == doctest::Approx(m + 0.693147).epsilon(1e-6));

  Tape<double> tape;
  const VarId ai = tape.input(a.cast<double>());
  const VarId xi = tape.constant(x.cast<double>());
  CHECK(tape.value(loss(tape, ai, xi))[0] == doctest::Approx(loss(a, x)).epsilon(1e-9));
  CHECK_THROWS_AS(loss(x, random_volume(Shape{1, 12, 12, 11}, 1)), Error);
}

TEST_CASE("init_params") {
  CHECK(init_params(5) == init_params(5));
  CHECK_FALSE(init_params(5) == init_params(6));
  const ModelParams<float> p = init_params(5);
  for (const auto& k : p.kernels) {
    const double bound = std::sqrt(1.0 / (static_cast<double>(k.c_in) * k.taps()));
    for (float w : k.weights) CHECK(std::abs(w) <= bound);
    for (float b : k.bias) CHECK(b == 0.0f);
  }
}

TEST_CASE("init output is finite and bounded") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto out = forward(init_params(seed), random_volume(Shape{1, 16, 16, 16}, seed, 0.0, 1.0));
    CHECK(all_finite(out.restored));
    for (float v : out.restored.storage()) CHECK(std::abs(v) <= 10.0f);
  }
}

TEST_CASE("one step decreases the loss on its own patch in at least 19 of 20 trials") {
  int decreased = 0;
  TrainConfig cfg;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    ModelParams<float> p = init_params(trial);
    AdamState adam = zero_adam_state(p);
    const std::vector<VolumePair> patch = pairs(1, 16, 500 + trial);
    const double before = train_step(p, adam, cfg, patch);
    const double after = set_loss(p, patch);
    CHECK(before == doctest::Approx(set_loss(init_params(trial), patch)).epsilon(1e-6));
    decreased += after < before;
  }
  MESSAGE("decreased in " << decreased << " of 20");
  CHECK(decreased >= 19);
}

TEST_CASE("loss on a fixed 10-patch set is non-increasing over 5 epochs in at least 4 of 5 runs") {
  int monotone = 0;
  TrainConfig cfg;
  cfg.batch = 2;
  for (std::uint64_t run = 0; run < 5; ++run) {
    ModelParams<float> p = init_params(run);
    AdamState adam = zero_adam_state(p);
    const std::vector<VolumePair> set = pairs(10, 16, 900 + 10 * run);
    double prev = set_loss(p, set);
    bool ok = true;
    for (int epoch = 0; epoch < 5; ++epoch) {
      for (std::size_t b = 0; b < set.size(); b += 2) {
        train_step(p, adam, cfg, std::span<const VolumePair>(set).subspan(b, 2));
      }
      const double l = set_loss(p, set);
      ok = ok && l <= prev;
      prev = l;
    }
    monotone += ok;
  }
  MESSAGE("monotone in " << monotone << " of 5");
  CHECK(monotone >= 4);
}

TEST_CASE("train config validation") {
  TrainConfig cfg = small_config(0);
  CHECK_NOTHROW(check_train_config(cfg));
  cfg.patch.h = 15;
  CHECK_THROWS_AS(check_train_config(cfg), Error);
  cfg = small_config(0);
  cfg.lr = 0.0;
  CHECK_THROWS_AS(check_train_config(cfg), Error);
  cfg = small_config(0);
  cfg.batch = 0;
  CHECK_THROWS_AS(check_train_config(cfg), Error);
}

TEST_CASE("training is deterministic and resumes exactly") {
  TrainingData data;
  data.train = pairs(3, 20, 40);
  data.val = pairs(1, 20, 80);
  const TrainConfig cfg = small_config(11);

  std::vector<EpochRecord> seen;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r, double) { seen.push_back(r); };
  const Checkpoint full = train(cfg, data, nullptr, hooks);
  CHECK(full.epoch == 3);
  REQUIRE(full.history.size() == 3);
  REQUIRE(seen.size() == 3);
  for (int e = 0; e < 3; ++e) {
    CHECK(seen[e].epoch == e + 1);
    CHECK(std::isfinite(full.history[e].loss));
    CHECK(std::isfinite(full.history[e].val_ssim));
  }

  const Checkpoint again = train(cfg, data);
  CHECK(again.params == full.params);
  CHECK(again.adam == full.adam);

  TrainConfig first = cfg;
  first.epochs = 2;
  const Checkpoint part = train(first, data);
  CHECK(part.epoch == 2);
  std::vector<int> resumed_epochs;
  TrainHooks rh;
  rh.on_epoch = [&](const EpochRecord& r, double) { resumed_epochs.push_back(r.epoch); };
  const Checkpoint resumed = train(cfg, data, &part, rh);
  CHECK(resumed_epochs == std::vector<int>{3});
  CHECK(resumed.epoch == 3);
  CHECK(resumed.params == full.params);
  CHECK(resumed.adam == full.adam);
  REQUIRE(resumed.history.size() == 3);
  CHECK(resumed.history[2].loss == full.history[2].loss);
  CHECK(resumed.rng_tag == full.rng_tag);

  SUBCASE("a finished checkpoint cannot be resumed") {
    CHECK_THROWS_AS(train(cfg, data, &full), Error);
  }
  SUBCASE("empty data fails") {
    CHECK_THROWS_AS(train(cfg, TrainingData{}), Error);
  }
}

TEST_CASE("checkpoint hook cadence") {
  TrainingData data;
  data.train = pairs(2, 16, 60);
  TrainConfig cfg = small_config(12);
  cfg.epochs = 4;
  cfg.checkpoint_every = 2;
  std::vector<int> at;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const Checkpoint& ck) { at.push_back(ck.epoch); };
  const Checkpoint ck = train(cfg, data, nullptr, hooks);
  CHECK(at == std::vector<int>{2, 4});
  CHECK(std::isnan(ck.history.back().val_ssim));
}

TEST_CASE("non-finite loss names the first bad tensor") {
  ModelParams<float> p = init_params(1);
  p[Layer::eb1_conv].bias[0] = std::numeric_limits<float>::quiet_NaN();
  AdamState adam = zero_adam_state(p);
  try {
    train_step(p, adam, TrainConfig{}, pairs(1, 16, 3));
    FAIL("expected a numerical failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numerical);
    CHECK(std::string(e.what()).find("eb1.conv") != std::string::npos);
  }
}

TEST_CASE("tiled inference") {
  const ModelParams<float> p = init_params(21);

  SUBCASE("a volume within one tile equals the direct forward") {
    const Volume y = random_volume(Shape{1, 16, 20, 24}, 1, 0.0, 1.0);
    Volume direct = forward(p, y).restored;
    for (float& v : direct.storage()) v = std::max(v, 0.0f);
    CHECK(infer(p, y, TileSpec{32, 32, 32, 8}) == direct);
  }
  SUBCASE("odd dims are padded and cropped back") {
    const Volume y = random_volume(Shape{1, 15, 17, 9}, 2, 0.0, 1.0);
    const Volume out = infer(p, y);
    CHECK(out.shape() == y.shape());
    for (float v : out.storage()) CHECK(v >= 0.0f);
  }
  SUBCASE("random 64^3 with 32^3 tiles stays within 0.02 of untiled") {
    const Volume y = random_volume(Shape{1, 64, 64, 64}, 3, 0.0, 1.0);
    const double dev = max_abs_diff(infer(p, y, TileSpec{32, 32, 32, 8}),
                                    infer(p, y, TileSpec{64, 64, 64, 8}));
    MESSAGE("tiled vs untiled max deviation: " << dev);
    CHECK(dev <= 0.02);
  }
  SUBCASE("constant volume stays within 0.02 of untiled") {
    const Volume y(Shape{1, 48, 48, 48}, 0.4f);
    const double dev = max_abs_diff(infer(p, y, TileSpec{32, 32, 32, 8}),
                                    infer(p, y, TileSpec{48, 48, 48, 8}));
    MESSAGE("constant volume tiled vs untiled: " << dev);
    CHECK(dev <= 0.02);
  }
  SUBCASE("tile validation") {
    CHECK_THROWS_AS(check_tile_spec(TileSpec{31, 32, 32, 8}), Error);
    CHECK_THROWS_AS(check_tile_spec(TileSpec{32, 32, 32, 4}), Error);
    CHECK_THROWS_AS(check_tile_spec(TileSpec{16, 16, 16, 16}), Error);
  }
}

TEST_CASE("validate scores restored volumes") {
  const std::vector<VolumePair> set = pairs(2, 16, 70);
  const Scores s = validate(init_params(1), set);
  CHECK(s.ssim > -1.0);
  CHECK(s.ssim <= 1.0);
  CHECK(std::isfinite(s.psnr));
  CHECK(std::isnan(validate(init_params(1), {}).ssim));
}
