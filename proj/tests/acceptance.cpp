// One PASS/FAIL line per acceptance criterion. Exit status is non-zero when
// any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lucyd/classic.hpp"
#include "lucyd/evaluation.hpp"
#include "lucyd/gradcheck.hpp"
#include "lucyd/metrics.hpp"
#include "lucyd/network.hpp"
#include "lucyd/ops.hpp"
#include "lucyd/simulate.hpp"
#include "lucyd/training.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace lucyd;
using lucyd::test::circular_oracle;
using lucyd::test::conv_oracle;
using lucyd::test::max_abs_diff;
using lucyd::test::random_kernel;
using lucyd::test::random_psf;
using lucyd::test::random_volume;
using lucyd::test::TempDir;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [failed]");
  }
};

// Desk-scale training budgets.
constexpr int kVolumeSide = 64;
constexpr double kTrainBudgetSeconds = 3600.0;

TrainConfig desk_config(std::uint64_t seed, int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch = 4;
  cfg.patches_per_epoch = 40;
  cfg.patch = PatchShape{32, 64, 64};
  cfg.seed = seed;
  cfg.val_limit = 3;
  return cfg;
}

TrainingData split_pairs(const Dataset& ds) {
  TrainingData data;
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    VolumePair p{normalized(ds.degraded[i]), normalized(ds.truths[ds.entries[i].phantom_index])};
    (ds.entries[i].split == "val" ? data.val : data.train).push_back(std::move(p));
  }
  return data;
}

Checkpoint train_logged(const TrainConfig& cfg, const TrainingData& data) {
  TrainHooks hooks;
  hooks.on_epoch = [](const EpochRecord& r, double wall) {
    std::printf("    epoch %d loss %.4f val_ssim %.4f val_psnr %.2f (%.0f s)\n", r.epoch, r.loss,
                r.val_ssim, r.val_psnr, wall);
    std::fflush(stdout);
  };
  return train(cfg, data, nullptr, hooks);
}

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  double ops_worst = 0.0, full_worst = 0.0;
  bool ops_ok = true, full_ok = true;
  for (const auto& r : gradcheck_ops(1)) {
    ops_worst = std::max(ops_worst, r.max_rel_error);
    ops_ok = ops_ok && r.passed() && r.tolerance <= kOpsTolerance;
  }
  for (const auto& r : gradcheck_full(1)) {
    full_worst = std::max(full_worst, r.max_rel_error);
    full_ok = full_ok && r.passed() && r.tolerance <= kFullTolerance;
  }
  const double elapsed = seconds_since(t0);
  o.require(ops_ok, "ops worst " + fmt("%.2e", ops_worst) + " <= 1e-5");
  o.require(full_ok, "full network + loss worst " + fmt("%.2e", full_worst) + " <= 1e-4");
  o.require(elapsed <= 180.0, fmt("%.1f", elapsed) + " s <= 180 s");
  return o;
}

Outcome convolution_oracle() {
  Outcome o;
  double conv_err = 0.0, fft_err = 0.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Volume x = random_volume(Shape{2, 8, 8, 8}, 100 + seed);
    const Kernel3d<float> k = random_kernel<float>(3, 2, 5, 5, 5, 200 + seed);
    for (int stride : {1, 2})
      for (Padding pad : {Padding::same_zero, Padding::valid}) {
        const Volume got = conv3d(x, k, stride, pad);
        const Volume want = conv_oracle(x, k, stride, pad);
        if (got.shape() != want.shape()) {
          conv_err = std::numeric_limits<double>::infinity();
          continue;
        }
        conv_err = std::max(conv_err, max_abs_diff(got, want));
      }
    const Volume y = random_volume(Shape{1, 8, 8, 8}, 300 + seed);
    for (const Psf& p : {random_psf(5, 5, 5, 400 + seed), gaussian_psf(1.0, 2)}) {
      fft_err = std::max(fft_err, max_abs_diff(fft_convolve(y, p), circular_oracle(y, p)));
    }
  }
  o.require(conv_err <= 1e-5, "conv3d max abs error " + fmt("%.2e", conv_err) + " <= 1e-5");
  o.require(fft_err <= 1e-5, "fft_convolve max abs error " + fmt("%.2e", fft_err) + " <= 1e-5");
  return o;
}

Outcome classic_rl() {
  Outcome o;
  const Volume y = random_volume(Shape{1, 8, 8, 8}, 6, 0.5, 2.0);
  o.require(richardson_lucy(y, gaussian_psf(0.0, 1), 10) == y, "delta PSF fixed point exact");

  const Volume u = random_volume(Shape{1, 12, 12, 12}, 7, 0.0, 1.0);
  double flux = 0.0, worst = 0.0;
  for (float v : u.storage()) flux += v;
  richardson_lucy(u, gaussian_psf(1.2, 4), 50, kDivEps, [&](int, const VolumeD& z) {
    double s = 0.0;
    for (double v : z.storage()) s += v;
    worst = std::max(worst, std::abs(s - flux) / flux);
  });
  o.require(worst <= 1e-4, "flux drift over 50 iterations " + fmt("%.2e", worst) + " <= 1e-4");

  const Volume x = generate_phantom(default_phantom_spec(PhantomKind::spheres, 32, 32, 32, 5));
  DegradationSpec blur;
  blur.sigma_b = 1.0;
  const Volume b = degrade(x, blur);
  const Volume z = richardson_lucy(b, gaussian_psf(1.0, default_psf_radius(1.0)), 30);
  const double gain = psnr(normalized(z), normalized(x)) - psnr(normalized(b), normalized(x));
  o.require(gain >= 2.0, "30 iterations gain " + fmt("%.2f", gain) + " dB >= 2 dB");
  return o;
}

Outcome loss_identities() {
  Outcome o;
  const Volume x = random_volume(Shape{1, 16, 16, 16}, 10, 0.0, 1.0);
  const double l = loss(x, x);
  o.require(std::abs(l) <= 1e-7, "loss(x, x) = " + fmt("%.1e", l));
  const double s = ssim3d(x, x);
  o.require(std::abs(s - 1.0) <= 1e-6, "SSIM(x, x) - 1 = " + fmt("%.1e", s - 1.0));
  Volume shifted = x;
  for (auto& v : shifted.storage()) v += 0.1f;
  const double p = psnr(x, shifted);
  o.require(std::abs(p - 20.0) <= 1e-4, "PSNR under a 0.1 offset = " + fmt("%.6f", p) + " dB");
  return o;
}

Outcome architecture_contracts() {
  Outcome o;
  double e_estimate = 0.0, e_update = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ModelParams<float> p = init_params(seed);
    std::mt19937_64 rng(seed + 50);
    std::uniform_real_distribution<float> u(-0.1f, 0.1f);
    for (auto& k : p.kernels)
      for (float& b : k.bias) b = u(rng);
    const Volume y = random_volume(Shape{1, 12, 16, 16}, seed, 0.0, 1.0);
    const auto out = forward(p, y);
    for (std::size_t i = 0; i < y.size(); ++i) {
      e_estimate = std::max(e_estimate, std::abs(static_cast<double>(out.estimate[i]) - y[i] - out.mask[i]));
      e_update = std::max(e_update, std::abs(static_cast<double>(out.restored[i]) -
                                             static_cast<double>(out.estimate[i]) * out.update[i]));
    }
  }
  o.require(e_estimate <= 1e-6, "max |z - y - M| " + fmt("%.1e", e_estimate));
  o.require(e_update <= 1e-6, "max |x' - z * u| " + fmt("%.1e", e_update));

  const ModelParams<float> p = init_params(0);
  bool shapes = true;
  for (int d : {8, 10, 16})
    for (int h : {8, 12, 14})
      for (int w : {8, 18}) {
        const Shape s{1, d, h, w};
        shapes = shapes && forward(p, random_volume(s, d * h + w, 0.0, 1.0)).restored.shape() == s;
      }
  o.require(shapes, "shape preserved on 18 even shapes");
  const std::size_t n = param_count(p);
  std::printf("    param_count %zu (reference %zu)\n", n, kReportedParamCount);
  o.require(n >= 15000 && n <= 60000,
            "param_count " + std::to_string(n) + " in [15000, 60000], reference " +
                std::to_string(kReportedParamCount));
  return o;
}

Outcome desk_training() {
  Outcome o;
  const TrainingData data = split_pairs(build_dataset(Regime::train_mixed, 4, kVolumeSide, kVolumeSide, kVolumeSide, 11));
  const auto t0 = Clock::now();
  const Checkpoint ck = train_logged(desk_config(11, 20), data);
  const double elapsed = seconds_since(t0);
  o.require(elapsed <= kTrainBudgetSeconds, "training " + fmt("%.0f", elapsed) + " s <= 3600 s");

  const Dataset test = build_dataset(Regime::test_grid, 3, kVolumeSide, kVolumeSide, kVolumeSide, 12);
  std::vector<EvalItem> items;
  for (std::size_t i = 0; i < test.entries.size(); ++i) {
    const DegradationSpec& d = test.entries[i].degradation;
    if (d.sigma_n != 20.0 && d.sigma_n != 50.0) continue;
    items.push_back(EvalItem{&test.truths[test.entries[i].phantom_index], &test.degraded[i], d});
  }
  const auto cells = evaluate(items, &ck.params, EvalOptions{});
  double rl = 0.0, ours = 0.0;
  bool every_cell = true;
  for (const CellResult& c : cells) {
    const Scores& in = c.scores[static_cast<std::size_t>(Method::input)];
    const Scores& r = c.scores[static_cast<std::size_t>(Method::rl)];
    const Scores& l = c.scores[static_cast<std::size_t>(Method::lucyd)];
    std::printf("    sigma_b %.1f sigma_n %.0f: SSIM input %.4f rl %.4f lucyd %.4f | PSNR input %.2f rl %.2f lucyd %.2f\n",
                c.cell.sigma_b, c.cell.sigma_n, in.ssim, r.ssim, l.ssim, in.psnr, r.psnr, l.psnr);
    every_cell = every_cell && l.ssim > in.ssim;
    rl += r.ssim;
    ours += l.ssim;
  }
  rl /= static_cast<double>(cells.size());
  ours /= static_cast<double>(cells.size());
  o.require(cells.size() == 4, std::to_string(cells.size()) + " cells");
  o.require(every_cell, "LUCYD SSIM above input in every cell");
  o.require(ours > rl, "mean SSIM LUCYD " + fmt("%.4f", ours) + " > RL " + fmt("%.4f", rl));
  return o;
}

Outcome cross_regime() {
  Outcome o;
  const TrainingData data = split_pairs(build_dataset(Regime::regime_a, 8, kVolumeSide, kVolumeSide, kVolumeSide, 21));
  const Checkpoint ck = train_logged(desk_config(21, 10), data);
  const Dataset test = build_dataset(Regime::regime_b, 4, kVolumeSide, kVolumeSide, kVolumeSide, 22);
  int beaten = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < test.entries.size(); ++i) {
    const Volume& truth = test.truths[test.entries[i].phantom_index];
    const Scores in = score(test.degraded[i], truth);
    const Scores l = score(restore(Method::lucyd, test.degraded[i], test.entries[i].degradation,
                                   &ck.params, EvalOptions{}),
                           truth);
    std::printf("    volume %zu: SSIM input %.4f lucyd %.4f\n", i, in.ssim, l.ssim);
    beaten += l.ssim > in.ssim;
    worst_margin = std::min(worst_margin, l.ssim - in.ssim);
  }
  o.require(beaten == static_cast<int>(test.entries.size()),
            std::to_string(beaten) + "/" + std::to_string(test.entries.size()) +
                " regime-B volumes above input SSIM, smallest margin " + fmt("%.4f", worst_margin));
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// gen -> degrade -> train -> eval through the command-line tool.
bool end_to_end(const std::filesystem::path& dir, std::string& ckpt, std::string& csv) {
  const std::string cli = LUCYD_CLI_PATH;
  const std::string d = dir.string();
  const std::vector<std::string> steps{
      "gen --kind mixed --shape 32,32,32 --seed 1 --out " + d + "/t0.lvol",
      "gen --kind mixed --shape 32,32,32 --seed 2 --out " + d + "/t1.lvol",
      "degrade --sigma-b 1.2 --sigma-n 15 --seed 3 --in " + d + "/t0.lvol --out " + d + "/d0.lvol --split train",
      "degrade --sigma-b 1.0 --sigma-n 30 --seed 4 --in " + d + "/t0.lvol --out " + d + "/d1.lvol --split train",
      "degrade --sigma-b 1.5 --sigma-n 0 --seed 5 --in " + d + "/t1.lvol --out " + d + "/d2.lvol --split val",
      "degrade --sigma-b 2.0 --sigma-n 20 --seed 6 --in " + d + "/t1.lvol --out " + d + "/d3.lvol --split test",
      "train --data " + d + "/manifest.json --epochs 2 --batch 2 --patches-per-epoch 4 --patch 16,16,16 --seed 7 --out " +
          d + "/model.lckp",
      "eval --ckpt " + d + "/model.lckp --data " + d + "/manifest.json --iters 10 --report " + d + "/report.csv",
  };
  for (const std::string& s : steps) {
    const std::string cmd = cli + " " + s + " > " + d + "/cli.log 2>&1";
    if (std::system(cmd.c_str()) != 0) {
      std::printf("    step failed: %s\n", s.c_str());
      return false;
    }
  }
  ckpt = slurp(dir / "model.lckp");
  csv = slurp(dir / "report.csv");
  return true;
}

Outcome reproducibility() {
  Outcome o;
  TempDir a("accept_run_a"), b("accept_run_b");
  std::string ck_a, csv_a, ck_b, csv_b;
  const bool ran = end_to_end(a.path(), ck_a, csv_a) && end_to_end(b.path(), ck_b, csv_b);
  o.require(ran, "both runs completed");
  if (!ran) return o;
  o.require(!ck_a.empty() && ck_a == ck_b, "checkpoints byte-identical (" + std::to_string(ck_a.size()) + " bytes)");
  o.require(!csv_a.empty() && csv_a == csv_b, "CSV reports byte-identical");
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "gradient suite", gradient_suite},
      {2, "convolution oracle", convolution_oracle},
      {3, "classic RL", classic_rl},
      {4, "loss identities", loss_identities},
      {5, "architecture contracts", architecture_contracts},
      {6, "desk-scale training on the mixed grid", desk_training},
      {7, "cross-regime generalization", cross_regime},
      {8, "reproducibility", reproducibility},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("error: ") + e.what());
    }
    failures += !o.pass;
    std::printf("criterion %d (%s): %s | %s | %.1f s\n", c.id, c.name, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
