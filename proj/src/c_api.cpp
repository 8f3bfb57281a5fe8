#include "lucyd/lucyd.h"

#include <exception>
#include <filesystem>
#include <new>
#include <string>
#include <utility>

#include "lucyd/classic.hpp"
#include "lucyd/evaluation.hpp"
#include "lucyd/gradcheck.hpp"
#include "lucyd/io.hpp"
#include "lucyd/metrics.hpp"
#include "lucyd/network.hpp"
#include "lucyd/simulate.hpp"
#include "lucyd/training.hpp"

struct lucyd_volume {
  lucyd::Volume v;
};

struct lucyd_model {
  lucyd::ModelParams<float> params;
};

namespace {

namespace fs = std::filesystem;
using lucyd::fail_usage;

thread_local std::string last_error;

template <typename F>
lucyd_status guarded(F&& f) {
  try {
    f();
    last_error.clear();
    return LUCYD_OK;
  } catch (const lucyd::Error& e) {
    last_error = e.what();
    return static_cast<lucyd_status>(e.kind());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return LUCYD_ERR_DATA;
  } catch (const std::exception& e) {
    last_error = e.what();
    return LUCYD_ERR_DATA;
  }
}

template <typename T>
const T& need(const T* p, const char* what) {
  if (!p) fail_usage(std::string(what) + " is null");
  return *p;
}

std::string need_str(const char* s, const char* what) {
  if (!s || !*s) fail_usage(std::string(what) + " is missing");
  return s;
}

template <typename T>
T** need_out(T** out) {
  if (!out) fail_usage("output pointer is null");
  *out = nullptr;
  return out;
}

lucyd_volume* wrap(lucyd::Volume v) { return new lucyd_volume{std::move(v)}; }

lucyd::DegradationSpec to_spec(const lucyd_degradation& d) {
  lucyd::DegradationSpec s;
  s.sigma_b = d.sigma_b;
  if (d.sigma_b_axial >= 0) s.sigma_b_axial = d.sigma_b_axial;
  s.sigma_n = d.sigma_n;
  s.seed = d.seed;
  if (!(s.sigma_b >= 0) || !(s.sigma_n >= 0)) {
    fail_usage("sigma_b and sigma_n must be non-negative");
  }
  return s;
}

lucyd::Psf psf_for(double sigma, double sigma_axial) {
  lucyd_degradation d{sigma, sigma_axial, 0.0, 0};
  return lucyd::degradation_psf(to_spec(d));
}

lucyd::TileSpec to_tile(const lucyd_tile* t) {
  lucyd::TileSpec s;
  if (t) s = lucyd::TileSpec{t->d, t->h, t->w, t->overlap};
  lucyd::check_tile_spec(s);
  return s;
}

/// Path of `file` relative to the directory of `manifest`.
std::string manifest_relative(const fs::path& manifest, const fs::path& file) {
  const fs::path base = fs::absolute(manifest).parent_path();
  const fs::path rel = fs::absolute(file).lexically_normal().lexically_relative(
      base.lexically_normal());
  if (rel.empty()) fail_usage("cannot express " + file.string() + " relative to " + base.string());
  return rel.generic_string();
}

lucyd::TrainConfig to_config(const lucyd_train_options& o) {
  lucyd::TrainConfig c;
  c.lr = o.lr;
  c.epochs = o.epochs;
  c.batch = o.batch;
  c.patches_per_epoch = o.patches_per_epoch;
  c.patch = lucyd::PatchShape{o.patch[0], o.patch[1], o.patch[2]};
  c.seed = o.seed;
  c.beta1 = o.beta1;
  c.beta2 = o.beta2;
  c.adam_eps = o.adam_eps;
  c.checkpoint_every = o.checkpoint_every;
  c.val_limit = o.val_limit;
  return c;
}

std::string stem_of(const std::string& path) {
  return fs::path(path).stem().string();
}

}  // namespace

extern "C" {

const char* lucyd_last_error(void) { return last_error.c_str(); }

lucyd_status lucyd_volume_create(const int shape[4], const float* data,
                                 lucyd_volume** out) {
  return guarded([&] {
    need_out(out);
    if (!shape) fail_usage("shape is null");
    const lucyd::Shape s{shape[0], shape[1], shape[2], shape[3]};
    lucyd::Volume v(s);
    if (data) std::copy(data, data + v.size(), v.storage().begin());
    *out = wrap(std::move(v));
  });
}

void lucyd_volume_free(lucyd_volume* v) { delete v; }

lucyd_status lucyd_volume_shape(const lucyd_volume* v, int shape[4]) {
  return guarded([&] {
    const lucyd::Shape s = need(v, "volume").v.shape();
    if (!shape) fail_usage("shape is null");
    shape[0] = s.c;
    shape[1] = s.d;
    shape[2] = s.h;
    shape[3] = s.w;
  });
}

lucyd_status lucyd_volume_data(const lucyd_volume* v, const float** data,
                               size_t* count) {
  return guarded([&] {
    const lucyd::Volume& vol = need(v, "volume").v;
    if (!data || !count) fail_usage("output pointer is null");
    *data = vol.storage().data();
    *count = vol.size();
  });
}

lucyd_status lucyd_volume_load(const char* path, lucyd_volume** out) {
  return guarded([&] {
    need_out(out);
    *out = wrap(lucyd::load_volume(need_str(path, "path")));
  });
}

lucyd_status lucyd_volume_save(const lucyd_volume* v, const char* path) {
  return guarded([&] {
    lucyd::save_volume(need_str(path, "path"), need(v, "volume").v);
  });
}

lucyd_status lucyd_phantom(const char* kind, int d, int h, int w, int count,
                           uint64_t seed, lucyd_volume** out) {
  return guarded([&] {
    need_out(out);
    const std::string k = need_str(kind, "kind");
    if (k == "mixed") {
      *out = wrap(lucyd::generate_mixed_phantom(d, h, w, seed));
      return;
    }
    lucyd::PhantomSpec spec =
        lucyd::default_phantom_spec(lucyd::phantom_kind_from_string(k), d, h, w, seed);
    if (count > 0) spec.count = count;
    *out = wrap(lucyd::generate_phantom(spec));
  });
}

lucyd_status lucyd_degrade(const lucyd_volume* x, const lucyd_degradation* spec,
                           lucyd_volume** out) {
  return guarded([&] {
    need_out(out);
    *out = wrap(lucyd::degrade(need(x, "volume").v, to_spec(need(spec, "degradation"))));
  });
}

lucyd_status lucyd_dataset_build(const char* regime, int n_volumes, int d, int h,
                                 int w, uint64_t seed, const char* dir) {
  return guarded([&] {
    const lucyd::Dataset ds = lucyd::build_dataset(
        lucyd::regime_from_string(need_str(regime, "regime")), n_volumes, d, h, w, seed);
    lucyd::write_dataset(ds, need_str(dir, "directory"));
  });
}

lucyd_status lucyd_manifest_add_truth(const char* manifest, const char* volume,
                                      const char* kind, int count, uint64_t seed) {
  return guarded([&] {
    const fs::path mpath = need_str(manifest, "manifest");
    const std::string vpath = need_str(volume, "volume path");
    const lucyd::Shape s = lucyd::load_volume(vpath).shape();
    lucyd::Manifest m = lucyd::load_or_new_manifest(mpath);
    lucyd::TruthRecord t;
    t.path = manifest_relative(mpath, vpath);
    t.kind = need_str(kind, "kind");
    t.d = s.d;
    t.h = s.h;
    t.w = s.w;
    t.count = count;
    if (count <= 0 && t.kind != "mixed") {
      t.count = lucyd::default_phantom_spec(lucyd::phantom_kind_from_string(t.kind),
                                            s.d, s.h, s.w, seed).count;
    }
    t.seed = seed;
    std::erase_if(m.truths, [&](const lucyd::TruthRecord& r) { return r.path == t.path; });
    m.truths.push_back(t);
    lucyd::save_manifest(mpath, m);
  });
}

lucyd_status lucyd_manifest_add_pair(const char* manifest, const char* truth,
                                     const char* degraded,
                                     const lucyd_degradation* spec,
                                     const char* split) {
  return guarded([&] {
    const fs::path mpath = need_str(manifest, "manifest");
    lucyd::Manifest m = lucyd::load_or_new_manifest(mpath);
    lucyd::PairRecord p;
    p.truth = manifest_relative(mpath, need_str(truth, "truth path"));
    p.degraded = manifest_relative(mpath, need_str(degraded, "degraded path"));
    p.degradation = to_spec(need(spec, "degradation"));
    p.split = need_str(split, "split");
    std::erase_if(m.pairs, [&](const lucyd::PairRecord& r) { return r.degraded == p.degraded; });
    m.pairs.push_back(p);
    lucyd::save_manifest(mpath, m);
  });
}

lucyd_status lucyd_wiener(const lucyd_volume* y, double psf_sigma,
                          double psf_sigma_axial, double nsr, lucyd_volume** out) {
  return guarded([&] {
    need_out(out);
    *out = wrap(lucyd::wiener(need(y, "volume").v, psf_for(psf_sigma, psf_sigma_axial), nsr));
  });
}

lucyd_status lucyd_richardson_lucy(const lucyd_volume* y, double psf_sigma,
                                   double psf_sigma_axial, int iterations,
                                   lucyd_volume** out) {
  return guarded([&] {
    need_out(out);
    *out = wrap(lucyd::richardson_lucy(need(y, "volume").v,
                                       psf_for(psf_sigma, psf_sigma_axial), iterations));
  });
}

lucyd_status lucyd_model_init(uint64_t seed, lucyd_model** out) {
  return guarded([&] {
    need_out(out);
    *out = new lucyd_model{lucyd::init_params(seed)};
  });
}

lucyd_status lucyd_model_load(const char* checkpoint, lucyd_model** out) {
  return guarded([&] {
    need_out(out);
    *out = new lucyd_model{lucyd::load_checkpoint(need_str(checkpoint, "checkpoint")).params};
  });
}

void lucyd_model_free(lucyd_model* m) { delete m; }

size_t lucyd_model_param_count(const lucyd_model* m) {
  return m ? lucyd::param_count(m->params) : 0;
}

size_t lucyd_reference_param_count(void) { return lucyd::kReportedParamCount; }

lucyd_status lucyd_model_forward(const lucyd_model* m, const lucyd_volume* y,
                                 lucyd_volume** restored, lucyd_volume** estimate,
                                 lucyd_volume** update, lucyd_volume** mask) {
  return guarded([&] {
    lucyd_volume** outs[] = {restored, estimate, update, mask};
    for (lucyd_volume** o : outs) {
      if (o) *o = nullptr;
    }
    auto r = lucyd::forward(need(m, "model").params, need(y, "volume").v);
    if (restored) *restored = wrap(std::move(r.restored));
    if (estimate) *estimate = wrap(std::move(r.estimate));
    if (update) *update = wrap(std::move(r.update));
    if (mask) *mask = wrap(std::move(r.mask));
  });
}

void lucyd_tile_default(lucyd_tile* tile) {
  if (!tile) return;
  const lucyd::TileSpec s;
  *tile = lucyd_tile{s.d, s.h, s.w, s.overlap};
}

lucyd_status lucyd_model_restore(const lucyd_model* m, const lucyd_volume* y,
                                 const lucyd_tile* tile, lucyd_volume** out) {
  return guarded([&] {
    need_out(out);
    lucyd::EvalOptions opts;
    opts.tile = to_tile(tile);
    *out = wrap(lucyd::restore(lucyd::Method::lucyd, need(y, "volume").v, {},
                               &need(m, "model").params, opts));
  });
}

void lucyd_train_options_default(lucyd_train_options* options) {
  if (!options) return;
  const lucyd::TrainConfig c;
  *options = lucyd_train_options{c.lr,
                                 c.epochs,
                                 c.batch,
                                 c.patches_per_epoch,
                                 {c.patch.d, c.patch.h, c.patch.w},
                                 c.seed,
                                 c.beta1,
                                 c.beta2,
                                 c.adam_eps,
                                 c.checkpoint_every,
                                 c.val_limit};
}

lucyd_status lucyd_train(const char* manifest, const lucyd_train_options* options,
                         const char* resume, const char* out_checkpoint,
                         lucyd_log_fn log, void* user) {
  return guarded([&] {
    lucyd::TrainConfig cfg = to_config(need(options, "options"));
    const fs::path out = need_str(out_checkpoint, "output checkpoint");
    std::optional<lucyd::Checkpoint> from;
    if (resume) {
      from = lucyd::load_checkpoint(resume);
      cfg.model = from->config.model;
    }
    lucyd::check_train_config(cfg);
    const lucyd::TrainingData data =
        lucyd::load_training_data(need_str(manifest, "manifest"));
    std::size_t params = 0;
    {
      lucyd::ModelParams<float> shape = lucyd::zero_params(cfg.model);
      params = lucyd::param_count(shape);
    }
    lucyd::TrainHooks hooks;
    hooks.on_epoch = [&](const lucyd::EpochRecord& r, double wall) {
      if (log) log(lucyd::format_log_line(r, wall, params).c_str(), user);
    };
    hooks.on_checkpoint = [&](const lucyd::Checkpoint& ck) {
      lucyd::save_checkpoint(out, ck);
    };
    const lucyd::Checkpoint ck =
        lucyd::train(cfg, data, from ? &*from : nullptr, hooks);
    lucyd::save_checkpoint(out, ck);
  });
}

void lucyd_eval_options_default(lucyd_eval_options* options) {
  if (!options) return;
  const lucyd::EvalOptions e;
  *options = lucyd_eval_options{e.rl_iterations,
                                e.nsr,
                                {e.tile.d, e.tile.h, e.tile.w, e.tile.overlap},
                                0,
                                nullptr,
                                nullptr};
}

lucyd_status lucyd_eval(const char* manifest, const char* checkpoint,
                        const lucyd_eval_options* options, const char* report) {
  return guarded([&] {
    const lucyd_eval_options& o = need(options, "options");
    const std::string report_path = need_str(report, "report path");
    lucyd::EvalOptions opts;
    opts.rl_iterations = o.rl_iterations;
    opts.nsr = o.nsr;
    opts.tile = to_tile(&o.tile);
    std::optional<lucyd::ModelParams<float>> model;
    if (checkpoint) model = lucyd::load_checkpoint(checkpoint).params;
    const lucyd::EvalSet set =
        lucyd::load_eval_set(need_str(manifest, "manifest"), o.split ? o.split : "test");
    lucyd::OutputSink sink;
    const fs::path dir = o.outputs_dir ? o.outputs_dir : "";
    if (o.outputs_dir) {
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec) lucyd::fail_data("cannot create directory " + dir.string());
      sink = [&](std::size_t item, lucyd::Method m, const lucyd::Volume& v) {
        lucyd::save_volume(dir / (stem_of(set.records[item].degraded) + "_" +
                                  lucyd::to_string(m) + ".lvol"),
                           v);
      };
    }
    const auto items = set.items();
    const auto cells =
        lucyd::evaluate(items, model ? &*model : nullptr, opts, sink);
    const std::string text = o.long_format
                                 ? lucyd::format_report_long(cells, model.has_value())
                                 : lucyd::format_report_wide(cells, model.has_value());
    lucyd::write_file(report_path, text);
  });
}

lucyd_status lucyd_score(const lucyd_volume* restored, const lucyd_volume* truth,
                         double* ssim, double* psnr) {
  return guarded([&] {
    if (!ssim || !psnr) fail_usage("output pointer is null");
    const lucyd::Scores s = lucyd::score(need(restored, "volume").v, need(truth, "volume").v);
    *ssim = s.ssim;
    *psnr = s.psnr;
  });
}

lucyd_status lucyd_project(const lucyd_volume* v, const char* axis,
                           const char* out_pgm) {
  return guarded([&] {
    const auto a = lucyd::projection_axis_from_string(need_str(axis, "axis"));
    const std::string path = need_str(out_pgm, "output path");
    lucyd::write_file(path, lucyd::encode_pgm(lucyd::max_projection(need(v, "volume").v, a)));
  });
}

lucyd_status lucyd_gradcheck(const char* mode, uint64_t seed, const char* fault_op,
                             lucyd_gradcheck_fn report, void* user) {
  return guarded([&] {
    const std::string m = need_str(mode, "mode");
    lucyd::GradcheckOptions opts;
    if (fault_op) {
      opts.fault = lucyd::op_from_name(fault_op);
      if (!opts.fault) fail_usage(std::string("unknown op '") + fault_op + "'");
    }
    std::vector<lucyd::GradcheckResult> results;
    if (m == "ops") {
      results = lucyd::gradcheck_ops(seed, opts);
    } else if (m == "full") {
      results = lucyd::gradcheck_full(seed, opts);
    } else {
      fail_usage("unknown gradcheck mode '" + m + "' (ops, full)");
    }
    int failed = 0;
    for (const auto& r : results) {
      if (!r.passed()) ++failed;
      if (report) {
        report(r.name.c_str(), r.worst_tensor.c_str(), r.max_rel_error, r.tolerance,
               r.passed() ? 1 : 0, user);
      }
    }
    if (failed > 0) {
      lucyd::fail_numerical("gradient check failed in " + std::to_string(failed) +
                            " of " + std::to_string(results.size()) + " cases");
    }
  });
}

}  // extern "C"
