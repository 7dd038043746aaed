#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "efuse/data.hpp"
#include "efuse/image.hpp"

namespace efuse::tgit {

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Synthetic shapes corpus

enum class ShapeType { Circle, Square, Triangle };

struct NamedColor {
  const char* name;
  double r, g, b;
};

const std::vector<NamedColor>& palette();
std::string_view shape_name(ShapeType t);

/// One drawn shape with its integer bounding box [x0, x1) x [y0, y1).
struct ShapeObject {
  ShapeType type;
  std::size_t color;
  int x0, y0, x1, y1;
};

struct ShapesScene {
  Image image;
  std::size_t background = 0;
  std::vector<ShapeObject> objects;
};

struct SceneOptions {
  int min_objects = 3;
  int max_objects = 6;
  /// Half-extent of a shape as a fraction of the image side.
  double min_radius = 0.10;
  double max_radius = 0.25;
  /// Restrict colors (indices into palette()); empty = whole palette.
  std::vector<std::size_t> colors;
};

/// Deterministic scene: uniform background plus opaque shapes. Horizontal and
/// vertical flips of the result always differ from it.
ShapesScene generate_shapes_scene(std::uint64_t seed, std::size_t size, const SceneOptions& opts = {});
Image generate_shapes_image(std::uint64_t seed, std::size_t size);

/// Nearest-neighbour resize.
Image resize_nearest(const Image& img, std::size_t height, std::size_t width);
/// Sub-image [x0, x1) x [y0, y1).
Image crop_region(const Image& img, int x0, int y0, int x1, int y1);

// ---------------------------------------------------------------------------
// Text-guided transformations

enum class TransformKind { Crop, Rotate, Flip, Jitter, Colorize, Grayscale };

std::string_view kind_name(TransformKind k);
TransformKind parse_kind(std::string_view name);

/// A fully specified transformation. Jitter factors are stored in tenths
/// (3..20 meaning 0.3..2.0).
struct TransformSpec {
  TransformKind kind = TransformKind::Flip;
  int crop_cell = 0;  // 0..8 row-major over {upper, center, lower} x {left, center, right}
  bool clockwise = true;
  int angle = 10;  // degrees, multiple of 10 in [10, 90]
  bool horizontal = true;
  int brightness = 10;
  int contrast = 10;
  int saturation = 10;

  static TransformSpec crop(int cell);
  static TransformSpec rotate(int angle, bool clockwise);
  static TransformSpec flip(bool horizontal);
  static TransformSpec jitter(int brightness, int contrast, int saturation);
  static TransformSpec colorize();
  static TransformSpec grayscale();

  void validate() const;
  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

/// Every spec of a kind, in canonical order (crop 9, rotate 18, flip 2,
/// colorize 1, grayscale 1). Jitter is not enumerated.
std::vector<TransformSpec> all_specs(TransformKind kind);
TransformSpec random_spec(TransformKind kind, Rng& rng);

Image grayscale(const Image& img);
Image adjust_brightness(const Image& img, double factor);
Image adjust_contrast(const Image& img, double factor);
Image adjust_saturation(const Image& img, double factor);

/// Colorize maps a grayscale query to the colored original; applied to an
/// image it returns the image unchanged (the query side is produced by
/// make_sample).
Image apply_transformation(const Image& img, const TransformSpec& spec);

std::string describe_transformation(const TransformSpec& spec);

/// (query image + description, transformed target).
struct TgitSample {
  Image query_image;
  std::string query_text;
  Image target_image;
};

TgitSample make_sample(const Image& img, const TransformSpec& spec);
TrainingPair to_pair(const TgitSample& s, std::size_t group, std::string task);

/// Evaluation kinds, in report order.
const std::vector<TransformKind>& eval_kinds();

/// Retrieval task over every relevant variant of `img`. The pool order is
/// shuffled with rng and the ground-truth index recorded.
RetrievalTask build_tgit_pool(const Image& img, TransformKind kind, Rng& rng);

/// Hard-negative group for training (crop 9, rotate 4, jitter 4, flip 4,
/// colorize/grayscale 2).
std::vector<TgitSample> hard_negative_group(const Image& img, TransformKind kind, Rng& rng);

/// Every text string the task generators can emit (vocabulary source).
std::vector<std::string> template_corpus();

// ---------------------------------------------------------------------------
// Dataset manifests (one JSON object per line)

struct ManifestRecord {
  std::string task;
  std::string query_image;  // path, may be empty for text-only queries
  std::string query_text;
  std::string target_image;
  std::optional<std::string> target_text;
  std::size_t group = 0;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::string& path);

/// Loads the images a record points to (paths relative to `root`).
TrainingPair load_record(const ManifestRecord& rec, const std::string& root);

}  // namespace efuse::tgit
