#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "efuse/data.hpp"
#include "efuse/encoder/encoder.hpp"
#include "efuse/tgit/tgit.hpp"

namespace efuse::batch {

using Rng = std::mt19937_64;

/// Deterministic corpus of shapes images addressed by index.
struct ShapesCorpus {
  std::uint64_t base_seed = 0;
  std::size_t count = 5000;
  std::size_t image_size = 32;

  tgit::ShapesScene scene(std::size_t index) const;
  Image image(std::size_t index) const { return scene(index).image; }
  std::size_t sample_index(Rng& rng) const;
};

/// Caption text of a scene ("a photo of a red circle, a blue square on a green background").
std::string scene_caption(const tgit::ShapesScene& scene);
/// Region description of one object ("the red circle").
std::string object_description(const tgit::ShapesScene& scene, std::size_t object);
/// Crop of one object's box resized to the scene size.
Image object_crop(const tgit::ShapesScene& scene, std::size_t object);

/// A source of training pairs for one task.
class TaskStream {
 public:
  virtual ~TaskStream() = default;
  virtual std::string name() const = 0;
  /// A hard-negative group: pairs that should sit in the same batch.
  virtual std::vector<TrainingPair> next_group(Rng& rng) = 0;
  /// One independent pair.
  virtual TrainingPair next_single(Rng& rng) = 0;
  /// Pairs per group (used to keep task proportions when groups are off).
  virtual std::size_t group_size() const = 0;
};

/// TGIT samples of one kind on corpus images. Colorize also emits grayscale.
std::unique_ptr<TaskStream> make_tgit_stream(tgit::TransformKind kind, ShapesCorpus corpus);
/// Image <-> caption pairs.
std::unique_ptr<TaskStream> make_caption_stream(ShapesCorpus corpus);
/// Full image + region description -> region crop; groups hold up to 4
/// regions of the same image (the sample plus 3 more).
std::unique_ptr<TaskStream> make_vg_crop_stream(ShapesCorpus corpus);

struct StreamSpec {
  std::unique_ptr<TaskStream> stream;
  double weight = 1.0;
};

/// Ordered pairs; pairs sharing `group` came from one hard-negative group.
struct Batch {
  std::vector<TrainingPair> pairs;
};

/// Composes fixed-size batches from weighted streams.
///
/// With hard negatives, streams are visited by smooth weighted round robin
/// and each visit contributes a whole group. A group that does not fit is
/// held for the next batch and the remaining slots are filled with single
/// pairs. Without hard negatives, every pair is an independent single with
/// its own group id, streams weighted by weight x group size.
class BatchComposer {
 public:
  BatchComposer(std::vector<StreamSpec> streams, std::size_t batch_size, bool hard_negatives);

  Batch compose(Rng& rng);
  std::size_t batch_size() const { return batch_size_; }

 private:
  std::size_t next_stream(bool by_samples);

  std::vector<StreamSpec> streams_;
  std::vector<double> current_;
  std::size_t batch_size_;
  bool hard_negatives_;
  std::size_t next_group_id_ = 0;
  std::vector<TrainingPair> pending_;
};

struct MaskConfig {
  double p = 0.1;
  tok::TokenId mask_id = 0;
  std::vector<tok::TokenId> never_masked;  // <bot>, <eot>, <pad>
};

MaskConfig default_mask_config(const tok::UnifiedVocab& vocab, double p = 0.1);

/// Masked copies of sequences with the positions J(z) and labels Y(z).
struct MaskedSide {
  std::vector<enc::TokenSequence> seqs;
  std::vector<std::vector<std::size_t>> positions;
  std::vector<std::vector<tok::TokenId>> labels;

  std::size_t masked_count() const;
};

struct MaskedBatch {
  MaskedSide first;
  MaskedSide second;
};

/// Replaces each eligible token by <mask> independently with probability p.
/// Eligible = attended, not in never_masked.
MaskedSide apply_masking(const std::vector<enc::TokenSequence>& seqs, const MaskConfig& cfg, Rng& rng);
MaskedBatch apply_masking(const std::vector<enc::TokenSequence>& first, const std::vector<enc::TokenSequence>& second,
                          const MaskConfig& cfg, Rng& rng);

}  // namespace efuse::batch
