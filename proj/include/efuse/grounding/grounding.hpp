#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "efuse/data.hpp"
#include "efuse/image.hpp"

namespace efuse::ground {

using Rng = std::mt19937_64;

/// Pixel box [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::string label;
  std::optional<std::string> description;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  double center_x() const { return 0.5 * (x0 + x1); }

  friend bool operator==(const Box&, const Box&) = default;
};

struct AnnotatedImage {
  std::string image;  // path, relative to the manifest directory
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Box> boxes;

  /// Throws std::invalid_argument on an empty or out-of-bounds box.
  void validate() const;
  friend bool operator==(const AnnotatedImage&, const AnnotatedImage&) = default;
};

/// Intersection over union of the two rectangles; 0 when both are empty.
double iou(const Box& a, const Box& b);

/// Greedy pruning in order: a box is kept unless its IoU with an already kept
/// box exceeds `threshold`. Returns kept indices.
std::vector<std::size_t> prune_overlapping(const std::vector<Box>& boxes, const std::vector<std::size_t>& order,
                                           double threshold);

/// A crop of manifest image `image`. The box need not be an annotation
/// (OI-Pos decoys are not).
struct Region {
  std::size_t image = 0;
  Box box;
  friend bool operator==(const Region&, const Region&) = default;
};

/// Region retrieval task before pixels are attached. The query is the full
/// image `image` plus `query_text`.
struct RegionTask {
  std::string task;
  std::size_t image = 0;
  std::string query_text;
  std::vector<Region> candidates;
  std::size_t ground_truth = 0;
  friend bool operator==(const RegionTask&, const RegionTask&) = default;
};

inline constexpr double kVgCropMaxIou = 0.3;

/// VG-Crop: described regions pruned greedily at IoU > 0.3, one of the
/// survivors chosen (with rng) as the query. Fewer than two survivors gives
/// no task. The pool keeps manifest order.
std::optional<RegionTask> build_vg_crop_task(const AnnotatedImage& ai, std::size_t image_index, Rng& rng);

struct OiCropConfig {
  int min_side = 50;
  double max_relative_size = 0.9;
  double max_aspect = 1.5;
  std::size_t min_label_count = 10;
  std::size_t min_unique_boxes = 5;
  double max_iou = 0.6;
  std::size_t same_image_negatives = 4;
  std::size_t other_image_negatives = 5;
  std::size_t max_queries_per_label = 5;
};

/// OI-Crop. Filters run in order: side, relative size, aspect ratio, global
/// label count, uniquely labelled boxes per image, overlap pruning. A query
/// is a box whose label is unique in its image; negatives are the first
/// boxes of other labels in the same image and the first box of the same
/// label in each following image (cyclic). Pools are shuffled with `seed`.
std::vector<RegionTask> build_oi_crop_tasks(const std::vector<AnnotatedImage>& manifest, std::uint64_t seed,
                                            const OiCropConfig& cfg = {});

/// Surviving boxes of each image after the OI-Crop filters (indices into
/// AnnotatedImage::boxes). Images dropped by the filters have an empty list.
std::vector<std::vector<std::size_t>> oi_crop_survivors(const std::vector<AnnotatedImage>& manifest,
                                                        const OiCropConfig& cfg = {});

struct OiPosConfig {
  int min_decoy_side = 30;
  std::size_t max_tasks_per_label = 100;
};

/// OI-Pos. For each label occurring exactly twice in an image whose two boxes
/// do not overlap horizontally, one task per side ("The {label} on the
/// left/right"). Decoys are the strips left and right of both objects, or
/// above and below them when a side strip is narrower than the minimum.
std::vector<RegionTask> build_oi_pos_tasks(const std::vector<AnnotatedImage>& manifest, std::uint64_t seed,
                                           const OiPosConfig& cfg = {});

/// Decoy boxes for an OI-Pos pair (0 to 2 of them).
std::vector<Box> oi_pos_decoys(const AnnotatedImage& ai, const Box& a, const Box& b, int min_side);

using ImageLoader = std::function<Image(const AnnotatedImage&)>;

/// Loads `<root>/<ai.image>` as an FIMG file.
ImageLoader fimg_loader(std::string root);

/// Attaches pixels: the query is the full image resized to `size` with the
/// query text, each candidate the box crop resized to `size`.
RetrievalTask materialize(const RegionTask& task, const std::vector<AnnotatedImage>& manifest,
                          const ImageLoader& load, std::size_t size);
std::vector<RetrievalTask> materialize(const std::vector<RegionTask>& tasks,
                                       const std::vector<AnnotatedImage>& manifest, const ImageLoader& load,
                                       std::size_t size);

/// Annotation manifest, one JSON object per line:
/// {"image", "width", "height", "boxes": [{"x0","y0","x1","y1","label","description"?}]}
void write_annotations(const std::string& path, const std::vector<AnnotatedImage>& manifest);
std::vector<AnnotatedImage> read_annotations(const std::string& path);

/// Synthetic annotated scenes: colored circles, squares and triangles with
/// labels "{color} {shape}" and boxes of varied size and aspect ratio.
struct SyntheticGrounding {
  std::vector<AnnotatedImage> manifest;
  std::vector<Image> images;
};
SyntheticGrounding synthetic_grounding(std::size_t n_images, std::uint64_t seed, std::size_t size = 256);

}  // namespace efuse::ground
