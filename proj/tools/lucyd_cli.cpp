#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lucyd/lucyd.h"

namespace {

namespace fs = std::filesystem;

struct VolumeDeleter {
  void operator()(lucyd_volume* v) const { lucyd_volume_free(v); }
};
struct ModelDeleter {
  void operator()(lucyd_model* m) const { lucyd_model_free(m); }
};
using VolumePtr = std::unique_ptr<lucyd_volume, VolumeDeleter>;
using ModelPtr = std::unique_ptr<lucyd_model, ModelDeleter>;

/// Carries a non-zero status out of a subcommand.
struct Failure {
  lucyd_status status;
};

void check(lucyd_status s) {
  if (s != LUCYD_OK) throw Failure{s};
}

VolumePtr load(const std::string& path) {
  lucyd_volume* v = nullptr;
  check(lucyd_volume_load(path.c_str(), &v));
  return VolumePtr(v);
}

std::string default_manifest(const std::string& out) {
  return (fs::path(out).parent_path() / "manifest.json").string();
}

std::vector<int> dims_or_fail(const std::vector<int>& v, const char* flag) {
  if (v.size() != 3) throw CLI::ValidationError(flag, "expected three values d,h,w");
  return v;
}

void add_dims(CLI::App* app, const std::string& name, std::vector<int>& dims,
              const std::string& help, const std::string& default_text) {
  app->add_option(name, dims, help)->delimiter(',')->expected(3)->default_str(default_text);
}

lucyd_tile tile_from(const std::vector<int>& dims, int overlap) {
  lucyd_tile t;
  lucyd_tile_default(&t);
  if (!dims.empty()) {
    t.d = dims[0];
    t.h = dims[1];
    t.w = dims[2];
  }
  if (overlap >= 0) t.overlap = overlap;
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LUCYD volumetric deconvolution toolkit"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  // gen
  std::string kind = "spheres";
  std::vector<int> shape{64, 64, 64};
  int count = 0;
  std::uint64_t seed = 0;
  std::string out, in, manifest;
  auto* gen = app.add_subcommand("gen", "Generate a ground-truth phantom volume");
  gen->add_option("--kind", kind, "dots, spheres, shells or mixed")
      ->check(CLI::IsMember({"dots", "spheres", "shells", "mixed"}));
  add_dims(gen, "--shape", shape, "Volume size d,h,w", "64,64,64");
  gen->add_option("--count", count, "Object count; 0 uses the default density");
  gen->add_option("--seed", seed, "Random seed");
  gen->add_option("--out", out, "Output LVOL file")->required();
  gen->add_option("--manifest", manifest,
                  "Manifest to record into (default: manifest.json next to --out)");

  // degrade
  double sigma_b = 0.0, sigma_b_axial = -1.0, sigma_n = 0.0;
  std::string split = "train";
  auto* deg = app.add_subcommand("degrade", "Blur and add noise to a volume");
  deg->add_option("--sigma-b", sigma_b, "Lateral Gaussian blur sigma (voxels)");
  deg->add_option("--sigma-b-axial", sigma_b_axial,
                  "Axial blur sigma")
      ->default_str("--sigma-b");
  deg->add_option("--sigma-n", sigma_n, "Noise std on the 0-255 scale");
  deg->add_option("--seed", seed, "Noise seed");
  deg->add_option("--in", in, "Ground-truth LVOL file")->required();
  deg->add_option("--out", out, "Output LVOL file")->required();
  deg->add_option("--split", split, "Split label recorded in the manifest");
  deg->add_option("--manifest", manifest,
                  "Manifest to record into (default: manifest.json next to --out)");

  // dataset
  std::string regime = "train-mixed";
  int n_volumes = 5;
  auto* ds = app.add_subcommand("dataset", "Build a phantom dataset for a degradation regime");
  ds->add_option("--regime", regime, "train-mixed, test-grid, regime-A or regime-B")
      ->check(CLI::IsMember({"train-mixed", "test-grid", "regime-A", "regime-B"}));
  ds->add_option("--n", n_volumes, "Number of ground-truth phantoms");
  add_dims(ds, "--shape", shape, "Volume size d,h,w", "64,64,64");
  ds->add_option("--seed", seed, "Random seed");
  ds->add_option("--out", out, "Output directory")->required();

  // train
  lucyd_train_options topt;
  lucyd_train_options_default(&topt);
  std::vector<int> patch;
  std::string data, resume, log_path;
  auto* train = app.add_subcommand("train", "Train the network on a dataset manifest");
  train->add_option("--data", data, "Dataset manifest")->required();
  train->add_option("--epochs", topt.epochs, "Total epochs");
  train->add_option("--lr", topt.lr, "Learning rate");
  train->add_option("--batch", topt.batch, "Patches per optimizer step");
  add_dims(train, "--patch", patch, "Patch size d,h,w", "32,64,64");
  train->add_option("--patches-per-epoch", topt.patches_per_epoch, "Patches drawn per epoch");
  train->add_option("--seed", topt.seed, "Random seed");
  train->add_option("--checkpoint-every", topt.checkpoint_every,
                    "Rewrite the checkpoint every N epochs");
  train->add_option("--val-limit", topt.val_limit, "Validation pairs per epoch; 0 for all");
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_option("--log", log_path, "JSONL log (default: --out with .jsonl)");
  train->add_option("--out", out, "Output LCKP file")->required();

  // deconv
  std::string method;
  double psf_sigma = 0.0, psf_sigma_axial = -1.0, nsr = 1e-2;
  int iters = 30, overlap = -1;
  std::string ckpt;
  std::vector<int> tile;
  auto* dec = app.add_subcommand("deconv", "Restore a volume");
  dec->add_option("--method", method, "wiener, rl or lucyd")
      ->required()
      ->check(CLI::IsMember({"wiener", "rl", "lucyd"}));
  dec->add_option("--psf-sigma", psf_sigma, "Lateral PSF sigma (voxels)");
  dec->add_option("--psf-sigma-axial", psf_sigma_axial, "Axial PSF sigma")
      ->default_str("--psf-sigma");
  dec->add_option("--nsr", nsr, "Wiener noise-to-signal ratio");
  dec->add_option("--iters", iters, "Richardson-Lucy iterations");
  dec->add_option("--ckpt", ckpt, "Checkpoint (lucyd)");
  add_dims(dec, "--tile", tile, "Tile size d,h,w (lucyd)", "64,64,64");
  dec->add_option("--overlap", overlap, "Tile overlap in voxels (lucyd)")->default_str("8");
  dec->add_option("--in", in, "Degraded LVOL file")->required();
  dec->add_option("--out", out, "Output LVOL file")->required();

  // eval
  lucyd_eval_options eopt;
  lucyd_eval_options_default(&eopt);
  std::string report, format = "wide", outputs, eval_split = "test";
  auto* ev = app.add_subcommand("eval", "Score all methods per degradation cell");
  ev->add_option("--ckpt", ckpt, "Checkpoint; omit to score only the baselines");
  ev->add_option("--data", data, "Dataset manifest")->required();
  ev->add_option("--report", report, "Output CSV")->required();
  ev->add_option("--format", format, "wide or long")->check(CLI::IsMember({"wide", "long"}));
  ev->add_option("--split", eval_split, "Manifest split to evaluate");
  ev->add_option("--outputs", outputs, "Directory for restored volumes");
  ev->add_option("--iters", eopt.rl_iterations, "Richardson-Lucy iterations");
  ev->add_option("--nsr", eopt.nsr, "Wiener noise-to-signal ratio");
  add_dims(ev, "--tile", tile, "Tile size d,h,w", "64,64,64");
  ev->add_option("--overlap", overlap, "Tile overlap in voxels")->default_str("8");

  // project
  std::string axis = "lateral";
  auto* proj = app.add_subcommand("project", "Maximum-intensity projection to PGM");
  proj->add_option("--in", in, "Input LVOL file")->required();
  proj->add_option("--axis", axis, "lateral or axial");
  proj->add_option("--out", out, "Output PGM file")->required();

  // gradcheck
  std::string mode = "ops", fault;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--seed", seed, "Random seed");
  gc->add_option("--mode", mode, "ops or full")->check(CLI::IsMember({"ops", "full"}));
  gc->add_option("--fault", fault, "Sign-flip the backward pass of this op (self-test)");

  try {
    app.parse(argc, argv);
    if (gen->parsed() || ds->parsed()) dims_or_fail(shape, "--shape");
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return LUCYD_ERR_USAGE;
  }

  try {
    if (gen->parsed()) {
      lucyd_volume* v = nullptr;
      check(lucyd_phantom(kind.c_str(), shape[0], shape[1], shape[2], count, seed, &v));
      VolumePtr vol(v);
      check(lucyd_volume_save(vol.get(), out.c_str()));
      if (manifest.empty()) manifest = default_manifest(out);
      check(lucyd_manifest_add_truth(manifest.c_str(), out.c_str(), kind.c_str(), count, seed));
    } else if (deg->parsed()) {
      VolumePtr x = load(in);
      const lucyd_degradation spec{sigma_b, sigma_b_axial, sigma_n, seed};
      lucyd_volume* y = nullptr;
      check(lucyd_degrade(x.get(), &spec, &y));
      VolumePtr vol(y);
      check(lucyd_volume_save(vol.get(), out.c_str()));
      if (manifest.empty()) manifest = default_manifest(out);
      check(lucyd_manifest_add_pair(manifest.c_str(), in.c_str(), out.c_str(), &spec,
                                    split.c_str()));
    } else if (ds->parsed()) {
      check(lucyd_dataset_build(regime.c_str(), n_volumes, shape[0], shape[1], shape[2],
                                seed, out.c_str()));
      std::cout << (fs::path(out) / "manifest.json").string() << "\n";
    } else if (train->parsed()) {
      if (!patch.empty()) {
        for (int i = 0; i < 3; ++i) topt.patch[i] = patch[i];
      }
      if (log_path.empty()) log_path = fs::path(out).replace_extension(".jsonl").string();
      std::ofstream log(log_path, resume.empty() ? std::ios::trunc : std::ios::app);
      if (!log) {
        std::cerr << "error: cannot open log " << log_path << "\n";
        return LUCYD_ERR_DATA;
      }
      auto sink = [](const char* line, void* user) {
        auto& os = *static_cast<std::ofstream*>(user);
        os << line << "\n";
        os.flush();
        std::cout << line << std::endl;
      };
      check(lucyd_train(data.c_str(), &topt, resume.empty() ? nullptr : resume.c_str(),
                        out.c_str(), sink, &log));
    } else if (dec->parsed()) {
      if (method == "lucyd" && ckpt.empty()) {
        std::cerr << "error: --method lucyd requires --ckpt\n";
        return LUCYD_ERR_USAGE;
      }
      VolumePtr y = load(in);
      lucyd_volume* r = nullptr;
      if (method == "wiener") {
        check(lucyd_wiener(y.get(), psf_sigma, psf_sigma_axial, nsr, &r));
      } else if (method == "rl") {
        check(lucyd_richardson_lucy(y.get(), psf_sigma, psf_sigma_axial, iters, &r));
      } else {
        lucyd_model* m = nullptr;
        check(lucyd_model_load(ckpt.c_str(), &m));
        ModelPtr model(m);
        const lucyd_tile t = tile_from(tile, overlap);
        check(lucyd_model_restore(model.get(), y.get(), &t, &r));
      }
      VolumePtr restored(r);
      check(lucyd_volume_save(restored.get(), out.c_str()));
    } else if (ev->parsed()) {
      eopt.tile = tile_from(tile, overlap);
      eopt.long_format = format == "long" ? 1 : 0;
      eopt.split = eval_split.c_str();
      eopt.outputs_dir = outputs.empty() ? nullptr : outputs.c_str();
      check(lucyd_eval(data.c_str(), ckpt.empty() ? nullptr : ckpt.c_str(), &eopt,
                       report.c_str()));
    } else if (proj->parsed()) {
      VolumePtr v = load(in);
      check(lucyd_project(v.get(), axis.c_str(), out.c_str()));
    } else if (gc->parsed()) {
      auto print = [](const char* name, const char* tensor, double err, double tol,
                      int passed, void*) {
        std::printf("%-36s %-24s max_rel_error=%.3e tol=%.0e %s\n", name, tensor, err,
                    tol, passed ? "PASS" : "FAIL");
        std::fflush(stdout);
      };
      check(lucyd_gradcheck(mode.c_str(), seed, fault.empty() ? nullptr : fault.c_str(),
                            print, nullptr));
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << lucyd_last_error() << "\n";
    return f.status;
  }
  return 0;
}
