#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lucyd/evaluation.hpp"
#include "lucyd/simulate.hpp"
#include "lucyd/training.hpp"

namespace lucyd {

// Container layout shared by LVOL and LCKP files: 4-byte magic, u32-LE JSON
// header length, JSON header space-padded so the payload starts on a 16-byte
// boundary, then little-endian f32 payload.

std::string encode_volume(const Volume& v);
Volume decode_volume(std::string_view bytes, const std::string& what = "volume");
void save_volume(const std::filesystem::path& path, const Volume& v);
Volume load_volume(const std::filesystem::path& path);

std::string encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::string_view bytes,
                             const std::string& what = "checkpoint");
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// A ground-truth volume and how it was generated. `kind` is a phantom kind
/// or "mixed".
struct TruthRecord {
  std::string path;
  std::string kind;
  int d = 0;
  int h = 0;
  int w = 0;
  int count = 0;
  std::uint64_t seed = 0;
};

struct PairRecord {
  std::string truth;
  std::string degraded;
  DegradationSpec degradation;
  std::string split;
};

/// Paths are relative to the manifest's directory.
struct Manifest {
  std::string regime;
  std::uint64_t seed = 0;
  std::vector<TruthRecord> truths;
  std::vector<PairRecord> pairs;
};

std::string encode_manifest(const Manifest& m);
Manifest decode_manifest(std::string_view text, const std::string& what = "manifest");
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& m);

/// Loads `path` if it exists, otherwise returns an empty manifest.
Manifest load_or_new_manifest(const std::filesystem::path& path);

/// Writes every volume of `ds` plus manifest.json into `dir`; returns the
/// manifest path.
std::filesystem::path write_dataset(const Dataset& ds,
                                    const std::filesystem::path& dir);

/// Normalized train and val pairs of a manifest.
TrainingData load_training_data(const std::filesystem::path& manifest);

/// Volumes of the pairs of one split, kept alive for EvalItem pointers.
struct EvalSet {
  std::vector<Volume> truths;
  std::vector<Volume> degraded;
  std::vector<PairRecord> records;
  std::vector<EvalItem> items() const;
};

EvalSet load_eval_set(const std::filesystem::path& manifest,
                      const std::string& split = "test");

enum class ProjectionAxis { lateral, axial };

ProjectionAxis projection_axis_from_string(const std::string& name);

/// Max-intensity image, row-major. Lateral collapses z (rows y, columns x);
/// axial collapses y (rows z, columns x).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> values;
};

Image max_projection(const Volume& v, ProjectionAxis axis);

/// Binary P5, maxval 65535, values mapped linearly from [min, max]; a
/// constant image maps to 0.
std::string encode_pgm(const Image& image);

/// One JSON line of the training log.
std::string format_log_line(const EpochRecord& r, double wall_seconds,
                            std::size_t param_count);

}  // namespace lucyd
