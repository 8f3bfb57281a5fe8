#include "lucyd/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

namespace lucyd {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "payload encoding assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  }
  return v;
}

void put_floats(std::string& out, std::span<const float> values) {
  const std::size_t at = out.size();
  out.resize(at + values.size() * sizeof(float));
  std::memcpy(out.data() + at, values.data(), values.size() * sizeof(float));
}

std::vector<float> get_floats(std::string_view bytes, std::size_t at,
                              std::size_t count) {
  std::vector<float> v(count);
  std::memcpy(v.data(), bytes.data() + at, count * sizeof(float));
  return v;
}

std::string container(const char* magic, const json& header,
                      std::size_t payload_bytes) {
  std::string text = header.dump();
  while ((8 + text.size()) % 16 != 0) text.push_back(' ');
  std::string out(magic, 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + payload_bytes);
  return out;
}

struct Parsed {
  json header;
  std::string_view payload;
};

Parsed parse_container(std::string_view bytes, const char* magic,
                       const std::string& what) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != std::string_view(magic, 4)) {
    fail_data(what + ": not a " + std::string(magic, 4) + " file");
  }
  const std::uint32_t len = get_u32(bytes, 4);
  if (len > bytes.size() - 8) fail_data(what + ": header length exceeds file size");
  Parsed p;
  try {
    p.header = json::parse(bytes.substr(8, len));
  } catch (const json::exception& e) {
    fail_data(what + ": malformed header: " + e.what());
  }
  if (!p.header.is_object()) fail_data(what + ": header is not a JSON object");
  if (p.header.value("version", 0) != kFormatVersion) {
    fail_data(what + ": unsupported format version");
  }
  p.payload = bytes.substr(8 + len);
  return p;
}

template <typename F>
auto json_field(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    fail_data(what + ": " + e.what());
  }
}

json patch_json(const PatchShape& p) { return json::array({p.d, p.h, p.w}); }

json config_json(const TrainConfig& c) {
  return json{
      {"model", {{"features", c.model.features}, {"bottleneck", c.model.bottleneck}}},
      {"train",
       {{"lr", c.lr},
        {"epochs", c.epochs},
        {"batch", c.batch},
        {"patches_per_epoch", c.patches_per_epoch},
        {"patch", patch_json(c.patch)},
        {"seed", c.seed},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"adam_eps", c.adam_eps},
        {"checkpoint_every", c.checkpoint_every},
        {"val_limit", c.val_limit}}}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  const json& m = j.at("model");
  c.model.features = m.at("features").get<int>();
  c.model.bottleneck = m.at("bottleneck").get<int>();
  const json& t = j.at("train");
  c.lr = t.at("lr").get<double>();
  c.epochs = t.at("epochs").get<int>();
  c.batch = t.at("batch").get<int>();
  c.patches_per_epoch = t.at("patches_per_epoch").get<int>();
  const auto p = t.at("patch").get<std::vector<int>>();
  if (p.size() != 3) fail_data("checkpoint patch must have 3 dims");
  c.patch = PatchShape{p[0], p[1], p[2]};
  c.seed = t.at("seed").get<std::uint64_t>();
  c.beta1 = t.at("beta1").get<double>();
  c.beta2 = t.at("beta2").get<double>();
  c.adam_eps = t.at("adam_eps").get<double>();
  c.checkpoint_every = t.at("checkpoint_every").get<int>();
  c.val_limit = t.at("val_limit").get<int>();
  return c;
}

json number_or_null(double v) {
  return std::isfinite(v) ? json(v) : json(nullptr);
}

double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

struct TensorRef {
  std::string name;
  std::vector<int> shape;
  const std::vector<float>* data;
};

std::vector<int> weight_shape(const Kernel3d<float>& k) {
  return {k.c_out, k.c_in, k.kd, k.kh, k.kw};
}

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

json degradation_json(const DegradationSpec& d) {
  json j{{"sigma_b", d.sigma_b}, {"sigma_n", d.sigma_n}, {"seed", d.seed}};
  j["sigma_b_axial"] = d.sigma_b_axial ? json(*d.sigma_b_axial) : json(nullptr);
  return j;
}

DegradationSpec degradation_from_json(const json& j) {
  DegradationSpec d;
  d.sigma_b = j.at("sigma_b").get<double>();
  d.sigma_n = j.at("sigma_n").get<double>();
  d.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("sigma_b_axial") && !j.at("sigma_b_axial").is_null()) {
    d.sigma_b_axial = j.at("sigma_b_axial").get<double>();
  }
  return d;
}

std::string indexed(const std::string& prefix, std::size_t i, int width) {
  std::string n = std::to_string(i);
  if (static_cast<int>(n.size()) < width) n.insert(0, width - n.size(), '0');
  return prefix + n;
}

}  // namespace

std::string encode_volume(const Volume& v) {
  const Shape s = v.shape();
  const json header{{"version", kFormatVersion},
                    {"dtype", "f32le"},
                    {"axes", "CDHW"},
                    {"shape", {s.c, s.d, s.h, s.w}}};
  std::string out = container("LVOL", header, v.size() * sizeof(float));
  put_floats(out, v.data());
  return out;
}

Volume decode_volume(std::string_view bytes, const std::string& what) {
  const Parsed p = parse_container(bytes, "LVOL", what);
  const auto shape = json_field(what, [&] {
    if (p.header.at("dtype").get<std::string>() != "f32le" ||
        p.header.at("axes").get<std::string>() != "CDHW") {
      fail_data(what + ": unsupported dtype or axis order");
    }
    return p.header.at("shape").get<std::vector<long long>>();
  });
  if (shape.size() != 4) fail_data(what + ": shape must have 4 entries");
  for (long long n : shape) {
    if (n <= 0 || n > std::numeric_limits<int>::max()) {
      fail_data(what + ": shape entries must be positive");
    }
  }
  const Shape s{static_cast<int>(shape[0]), static_cast<int>(shape[1]),
                static_cast<int>(shape[2]), static_cast<int>(shape[3])};
  if (p.payload.size() != s.numel() * sizeof(float)) {
    fail_data(what + ": payload holds " + std::to_string(p.payload.size()) +
              " bytes, shape " + s.str() + " needs " +
              std::to_string(s.numel() * sizeof(float)));
  }
  return Volume(s, get_floats(p.payload, 0, s.numel()));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail_data("error reading " + path.string());
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail_data("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail_data("error writing " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail_data("cannot write " + path.string());
  }
}

void save_volume(const std::filesystem::path& path, const Volume& v) {
  write_file(path, encode_volume(v));
}

Volume load_volume(const std::filesystem::path& path) {
  return decode_volume(read_file(path), path.string());
}

std::string encode_checkpoint(const Checkpoint& ck) {
  const auto& kernels = ck.params.kernels;
  if (ck.params.names.size() != kernels.size() ||
      ck.adam.m.size() != kernels.size() || ck.adam.v.size() != kernels.size()) {
    fail_usage("checkpoint tensors are inconsistent");
  }
  std::vector<TensorRef> tensors;
  auto add_kernel = [&](const std::string& prefix, const Kernel3d<float>& k) {
    tensors.push_back({prefix + ".weight", weight_shape(k), &k.weights});
    tensors.push_back({prefix + ".bias", {k.c_out}, &k.bias});
  };
  for (std::size_t i = 0; i < kernels.size(); ++i) add_kernel(ck.params.names[i], kernels[i]);
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    add_kernel("adam.m." + ck.params.names[i], ck.adam.m[i]);
  }
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    add_kernel("adam.v." + ck.params.names[i], ck.adam.v[i]);
  }

  json listing = json::array();
  std::size_t offset = 0;
  for (const TensorRef& t : tensors) {
    const std::size_t len = t.data->size() * sizeof(float);
    listing.push_back(
        {{"name", t.name}, {"shape", t.shape}, {"byte_offset", offset}, {"byte_len", len}});
    offset += len;
  }
  json history = json::array();
  for (const EpochRecord& r : ck.history) {
    history.push_back({{"epoch", r.epoch},
                       {"loss", number_or_null(r.loss)},
                       {"val_ssim", number_or_null(r.val_ssim)},
                       {"val_psnr", number_or_null(r.val_psnr)}});
  }
  const json header{{"version", kFormatVersion},
                    {"config", config_json(ck.config)},
                    {"epoch", ck.epoch},
                    {"rng", ck.rng_tag},
                    {"adam_step", ck.adam.step},
                    {"param_count", param_count(ck.params)},
                    {"history", history},
                    {"tensors", listing}};
  std::string out = container("LCKP", header, offset);
  for (const TensorRef& t : tensors) put_floats(out, *t.data);
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what) {
  const Parsed p = parse_container(bytes, "LCKP", what);
  Checkpoint ck;
  std::map<std::string, std::vector<float>> tensors;
  json_field(what, [&] {
    ck.config = config_from_json(p.header.at("config"));
    ck.epoch = p.header.at("epoch").get<int>();
    ck.rng_tag = p.header.at("rng").get<std::string>();
    ck.adam.step = p.header.at("adam_step").get<std::int64_t>();
    for (const json& r : p.header.at("history")) {
      ck.history.push_back(EpochRecord{r.at("epoch").get<int>(),
                                       number_from(r.at("loss")),
                                       number_from(r.at("val_ssim")),
                                       number_from(r.at("val_psnr"))});
    }
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const json& t : p.header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<std::vector<int>>();
      const auto off = t.at("byte_offset").get<std::size_t>();
      const auto len = t.at("byte_len").get<std::size_t>();
      for (int s : shape) {
        if (s <= 0) fail_data(what + ": tensor " + name + " has a non-positive dim");
      }
      if (len != shape_numel(shape) * sizeof(float)) {
        fail_data(what + ": tensor " + name + " length does not match its shape");
      }
      if (off > p.payload.size() || len > p.payload.size() - off) {
        fail_data(what + ": tensor " + name + " lies outside the payload");
      }
      if (!tensors.emplace(name, get_floats(p.payload, off, len / sizeof(float))).second) {
        fail_data(what + ": duplicate tensor " + name);
      }
      spans.emplace_back(off, len);
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i - 1].first + spans[i - 1].second > spans[i].first) {
        fail_data(what + ": tensor payloads overlap");
      }
    }
    return 0;
  });

  ck.params = zero_params<float>(ck.config.model);
  ck.adam = zero_adam_state(ck.params);
  ck.adam.step = json_field(what, [&] { return p.header.at("adam_step").get<std::int64_t>(); });
  auto take = [&](const std::string& name, std::vector<float>& dst) {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail_data(what + ": missing tensor " + name);
    if (it->second.size() != dst.size()) {
      fail_data(what + ": tensor " + name + " does not match the model config");
    }
    dst = std::move(it->second);
    tensors.erase(it);
  };
  for (std::size_t i = 0; i < ck.params.kernels.size(); ++i) {
    const std::string& n = ck.params.names[i];
    take(n + ".weight", ck.params.kernels[i].weights);
    take(n + ".bias", ck.params.kernels[i].bias);
    take("adam.m." + n + ".weight", ck.adam.m[i].weights);
    take("adam.m." + n + ".bias", ck.adam.m[i].bias);
    take("adam.v." + n + ".weight", ck.adam.v[i].weights);
    take("adam.v." + n + ".bias", ck.adam.v[i].bias);
  }
  if (!tensors.empty()) fail_data(what + ": unexpected tensor " + tensors.begin()->first);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

std::string encode_manifest(const Manifest& m) {
  json truths = json::array();
  for (const TruthRecord& t : m.truths) {
    truths.push_back({{"path", t.path},
                      {"kind", t.kind},
                      {"shape", {t.d, t.h, t.w}},
                      {"count", t.count},
                      {"seed", t.seed}});
  }
  json pairs = json::array();
  for (const PairRecord& p : m.pairs) {
    pairs.push_back({{"truth", p.truth},
                     {"degraded", p.degraded},
                     {"degradation", degradation_json(p.degradation)},
                     {"split", p.split}});
  }
  const json j{{"version", kFormatVersion},
               {"regime", m.regime},
               {"seed", m.seed},
               {"truths", truths},
               {"pairs", pairs}};
  return j.dump(2) + "\n";
}

Manifest decode_manifest(std::string_view text, const std::string& what) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail_data(what + ": malformed JSON: " + e.what());
  }
  return json_field(what, [&] {
    if (j.at("version").get<int>() != kFormatVersion) {
      fail_data(what + ": unsupported manifest version");
    }
    Manifest m;
    m.regime = j.at("regime").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const json& t : j.at("truths")) {
      const auto shape = t.at("shape").get<std::vector<int>>();
      if (shape.size() != 3) fail_data(what + ": truth shape must have 3 entries");
      m.truths.push_back(TruthRecord{t.at("path").get<std::string>(),
                                     t.at("kind").get<std::string>(), shape[0],
                                     shape[1], shape[2], t.at("count").get<int>(),
                                     t.at("seed").get<std::uint64_t>()});
    }
    for (const json& p : j.at("pairs")) {
      m.pairs.push_back(PairRecord{p.at("truth").get<std::string>(),
                                   p.at("degraded").get<std::string>(),
                                   degradation_from_json(p.at("degradation")),
                                   p.at("split").get<std::string>()});
    }
    return m;
  });
}

Manifest load_manifest(const std::filesystem::path& path) {
  return decode_manifest(read_file(path), path.string());
}

void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  write_file(path, encode_manifest(m));
}

Manifest load_or_new_manifest(const std::filesystem::path& path) {
  if (std::filesystem::exists(path)) return load_manifest(path);
  return Manifest{};
}

std::filesystem::path write_dataset(const Dataset& ds,
                                    const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail_data("cannot create directory " + dir.string());
  Manifest m;
  m.regime = to_string(ds.regime);
  m.seed = ds.seed;
  for (std::size_t i = 0; i < ds.truths.size(); ++i) {
    TruthRecord t;
    t.path = indexed("truth_", i, 3) + ".lvol";
    t.kind = "mixed";
    t.d = ds.d;
    t.h = ds.h;
    t.w = ds.w;
    t.count = 0;
    t.seed = derive_seed(ds.seed, i, 0);
    save_volume(dir / t.path, ds.truths[i]);
    m.truths.push_back(t);
  }
  std::vector<std::size_t> per_phantom(ds.truths.size(), 0);
  for (std::size_t e = 0; e < ds.entries.size(); ++e) {
    const DatasetEntry& entry = ds.entries[e];
    PairRecord p;
    p.truth = m.truths[entry.phantom_index].path;
    p.degraded = indexed("degraded_", entry.phantom_index, 3) +
                 indexed("_", per_phantom[entry.phantom_index]++, 2) + ".lvol";
    p.degradation = entry.degradation;
    p.split = entry.split;
    save_volume(dir / p.degraded, ds.degraded[e]);
    m.pairs.push_back(p);
  }
  const auto path = dir / "manifest.json";
  save_manifest(path, m);
  return path;
}

TrainingData load_training_data(const std::filesystem::path& manifest) {
  const Manifest m = load_manifest(manifest);
  const auto base = manifest.parent_path();
  TrainingData data;
  std::map<std::string, Volume> truths;
  for (const PairRecord& p : m.pairs) {
    if (p.split != "train" && p.split != "val") continue;
    auto it = truths.find(p.truth);
    if (it == truths.end()) {
      it = truths.emplace(p.truth, normalized(load_volume(base / p.truth))).first;
    }
    VolumePair pair{normalized(load_volume(base / p.degraded)), it->second};
    if (pair.degraded.shape() != pair.truth.shape()) {
      fail_data("pair " + p.degraded + " does not match the shape of " + p.truth);
    }
    (p.split == "train" ? data.train : data.val).push_back(std::move(pair));
  }
  return data;
}

std::vector<EvalItem> EvalSet::items() const {
  std::vector<EvalItem> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.push_back(EvalItem{&truths[i], &degraded[i], records[i].degradation});
  }
  return out;
}

EvalSet load_eval_set(const std::filesystem::path& manifest,
                      const std::string& split) {
  const Manifest m = load_manifest(manifest);
  const auto base = manifest.parent_path();
  EvalSet set;
  for (const PairRecord& p : m.pairs) {
    if (p.split != split) continue;
    set.truths.push_back(load_volume(base / p.truth));
    set.degraded.push_back(load_volume(base / p.degraded));
    if (set.truths.back().shape() != set.degraded.back().shape()) {
      fail_data("pair " + p.degraded + " does not match the shape of " + p.truth);
    }
    set.records.push_back(p);
  }
  return set;
}

ProjectionAxis projection_axis_from_string(const std::string& name) {
  if (name == "lateral") return ProjectionAxis::lateral;
  if (name == "axial") return ProjectionAxis::axial;
  fail_usage("unknown projection axis '" + name + "' (lateral, axial)");
}

Image max_projection(const Volume& v, ProjectionAxis axis) {
  const Shape s = v.shape();
  if (s.c != 1) fail_usage("projection needs a single-channel volume");
  Image img;
  img.width = s.w;
  img.height = axis == ProjectionAxis::lateral ? s.h : s.d;
  img.values.assign(static_cast<std::size_t>(img.width) * img.height,
                    -std::numeric_limits<float>::infinity());
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const int row = axis == ProjectionAxis::lateral ? y : z;
        float& px = img.values[static_cast<std::size_t>(row) * img.width + x];
        px = std::max(px, v.at(0, z, y, x));
      }
  return img;
}

std::string encode_pgm(const Image& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n65535\n";
  const auto [lo, hi] = std::minmax_element(image.values.begin(), image.values.end());
  const double min = image.values.empty() ? 0.0 : *lo;
  const double range = image.values.empty() ? 0.0 : *hi - min;
  for (float v : image.values) {
    long q = 0;
    if (range > 0) q = std::lround((static_cast<double>(v) - min) / range * 65535.0);
    q = std::clamp(q, 0L, 65535L);
    out.push_back(static_cast<char>((q >> 8) & 0xff));
    out.push_back(static_cast<char>(q & 0xff));
  }
  return out;
}

std::string format_log_line(const EpochRecord& r, double wall_seconds,
                            std::size_t param_count) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["loss"] = number_or_null(r.loss);
  j["val_ssim"] = number_or_null(r.val_ssim);
  j["val_psnr"] = number_or_null(r.val_psnr);
  j["wall_seconds"] = wall_seconds;
  j["param_count"] = param_count;
  j["param_count_reference"] = kReportedParamCount;
  return j.dump();
}

}  // namespace lucyd
