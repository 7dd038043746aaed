#include "efuse/batcher/batcher.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace efuse::batch {

namespace {

std::string color_shape(const tgit::ShapeObject& o) {
  return std::string(tgit::palette()[o.color].name) + " " + std::string(tgit::shape_name(o.type));
}

/// Objects whose (color, shape) label is unique within the scene.
std::vector<std::size_t> nameable_objects(const tgit::ShapesScene& scene) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto label = color_shape(scene.objects[i]);
    std::size_t same = 0;
    for (const auto& o : scene.objects) same += color_shape(o) == label ? 1 : 0;
    if (same == 1) out.push_back(i);
  }
  return out;
}

class TgitStream : public TaskStream {
 public:
  TgitStream(tgit::TransformKind kind, ShapesCorpus corpus) : kind_(kind), corpus_(corpus) {}

  std::string name() const override { return std::string(tgit::kind_name(kind_)); }

  std::vector<TrainingPair> next_group(Rng& rng) override {
    const Image img = corpus_.image(corpus_.sample_index(rng));
    std::vector<TrainingPair> out;
    for (const auto& s : tgit::hard_negative_group(img, kind_, rng)) out.push_back(tgit::to_pair(s, 0, name()));
    return out;
  }

  TrainingPair next_single(Rng& rng) override {
    const Image img = corpus_.image(corpus_.sample_index(rng));
    tgit::TransformKind k = kind_;
    if (k == tgit::TransformKind::Colorize || k == tgit::TransformKind::Grayscale) {
      k = std::bernoulli_distribution(0.5)(rng) ? tgit::TransformKind::Colorize : tgit::TransformKind::Grayscale;
    }
    return tgit::to_pair(tgit::make_sample(img, tgit::random_spec(k, rng)), 0, name());
  }

  std::size_t group_size() const override {
    switch (kind_) {
      case tgit::TransformKind::Crop:
        return 9;
      case tgit::TransformKind::Colorize:
      case tgit::TransformKind::Grayscale:
        return 2;
      default:
        return 4;
    }
  }

 private:
  tgit::TransformKind kind_;
  ShapesCorpus corpus_;
};

class CaptionStream : public TaskStream {
 public:
  explicit CaptionStream(ShapesCorpus corpus) : corpus_(corpus) {}
  std::string name() const override { return "caption"; }
  std::vector<TrainingPair> next_group(Rng& rng) override { return {next_single(rng)}; }
  TrainingPair next_single(Rng& rng) override {
    const auto scene = corpus_.scene(corpus_.sample_index(rng));
    return {MultimodalInput::of_image(scene.image), MultimodalInput::of_text(scene_caption(scene)), 0, name()};
  }
  std::size_t group_size() const override { return 1; }

 private:
  ShapesCorpus corpus_;
};

class VgCropStream : public TaskStream {
 public:
  explicit VgCropStream(ShapesCorpus corpus) : corpus_(corpus) {}
  std::string name() const override { return "vg_crop"; }

  std::vector<TrainingPair> next_group(Rng& rng) override {
    for (;;) {
      const auto scene = corpus_.scene(corpus_.sample_index(rng));
      auto objs = nameable_objects(scene);
      if (objs.empty()) continue;
      std::shuffle(objs.begin(), objs.end(), rng);
      objs.resize(std::min<std::size_t>(objs.size(), 4));
      std::vector<TrainingPair> out;
      for (std::size_t o : objs) out.push_back(pair_for(scene, o));
      return out;
    }
  }

  TrainingPair next_single(Rng& rng) override {
    for (;;) {
      const auto scene = corpus_.scene(corpus_.sample_index(rng));
      const auto objs = nameable_objects(scene);
      if (objs.empty()) continue;
      return pair_for(scene, objs[std::uniform_int_distribution<std::size_t>(0, objs.size() - 1)(rng)]);
    }
  }

  std::size_t group_size() const override { return 4; }

 private:
  TrainingPair pair_for(const tgit::ShapesScene& scene, std::size_t o) const {
    return {MultimodalInput::of(scene.image, object_description(scene, o)),
            MultimodalInput::of_image(object_crop(scene, o)), 0, name()};
  }
  ShapesCorpus corpus_;
};

}  // namespace

tgit::ShapesScene ShapesCorpus::scene(std::size_t index) const {
  if (index >= count) throw std::out_of_range("corpus index " + std::to_string(index) + " >= " + std::to_string(count));
  return tgit::generate_shapes_scene(base_seed + index, image_size);
}

std::size_t ShapesCorpus::sample_index(Rng& rng) const {
  return std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
}

std::string scene_caption(const tgit::ShapesScene& scene) {
  std::string s = "a photo of ";
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (i) s += ", ";
    s += "a " + color_shape(scene.objects[i]);
  }
  return s + " on a " + tgit::palette()[scene.background].name + " background";
}

std::string object_description(const tgit::ShapesScene& scene, std::size_t object) {
  return "the " + color_shape(scene.objects.at(object));
}

Image object_crop(const tgit::ShapesScene& scene, std::size_t object) {
  const auto& o = scene.objects.at(object);
  return tgit::resize_nearest(tgit::crop_region(scene.image, o.x0, o.y0, o.x1, o.y1), scene.image.height,
                              scene.image.width);
}

std::unique_ptr<TaskStream> make_tgit_stream(tgit::TransformKind kind, ShapesCorpus corpus) {
  return std::make_unique<TgitStream>(kind, corpus);
}
std::unique_ptr<TaskStream> make_caption_stream(ShapesCorpus corpus) { return std::make_unique<CaptionStream>(corpus); }
std::unique_ptr<TaskStream> make_vg_crop_stream(ShapesCorpus corpus) { return std::make_unique<VgCropStream>(corpus); }

BatchComposer::BatchComposer(std::vector<StreamSpec> streams, std::size_t batch_size, bool hard_negatives)
    : streams_(std::move(streams)), current_(streams_.size(), 0.0), batch_size_(batch_size), hard_negatives_(hard_negatives) {
  if (streams_.empty()) throw std::invalid_argument("BatchComposer: no streams");
  if (batch_size_ == 0) throw std::invalid_argument("BatchComposer: batch size must be positive");
  for (const auto& s : streams_) {
    if (!s.stream) throw std::invalid_argument("BatchComposer: null stream");
    if (!(s.weight > 0.0)) throw std::invalid_argument("BatchComposer: stream weights must be positive");
    if (hard_negatives_ && s.stream->group_size() > batch_size_) {
      throw std::invalid_argument("BatchComposer: stream '" + s.stream->name() + "' groups of " +
                                  std::to_string(s.stream->group_size()) + " exceed batch size " +
                                  std::to_string(batch_size_));
    }
  }
}

std::size_t BatchComposer::next_stream(bool by_samples) {
  // smooth weighted round robin: deterministic, interleaved, proportional
  double total = 0.0;
  std::size_t best = 0;
  for (std::size_t i = 0; i < streams_.size(); ++i) {
    const double w = streams_[i].weight * (by_samples ? static_cast<double>(streams_[i].stream->group_size()) : 1.0);
    current_[i] += w;
    total += w;
    if (current_[i] > current_[best]) best = i;
  }
  current_[best] -= total;
  return best;
}

Batch BatchComposer::compose(Rng& rng) {
  Batch b;
  b.pairs.reserve(batch_size_);
  if (!hard_negatives_) {
    while (b.pairs.size() < batch_size_) {
      TrainingPair p = streams_[next_stream(true)].stream->next_single(rng);
      p.group = next_group_id_++;
      b.pairs.push_back(std::move(p));
    }
    return b;
  }
  for (;;) {
    if (pending_.empty()) {
      pending_ = streams_[next_stream(false)].stream->next_group(rng);
      if (pending_.size() > batch_size_) {
        throw std::length_error("group of " + std::to_string(pending_.size()) + " pairs exceeds batch size " +
                                std::to_string(batch_size_));
      }
      const std::size_t id = next_group_id_++;
      for (auto& p : pending_) p.group = id;
    }
    if (b.pairs.size() + pending_.size() > batch_size_) break;
    for (auto& p : pending_) b.pairs.push_back(std::move(p));
    pending_.clear();
    if (b.pairs.size() == batch_size_) return b;
  }
  // the held group opens the next batch; top up with independent pairs
  std::size_t s = 0;
  while (b.pairs.size() < batch_size_) {
    TrainingPair p = streams_[s++ % streams_.size()].stream->next_single(rng);
    p.group = next_group_id_++;
    b.pairs.push_back(std::move(p));
  }
  return b;
}

MaskConfig default_mask_config(const tok::UnifiedVocab& vocab, double p) {
  return {p, vocab.mask(), {vocab.bot(), vocab.eot(), vocab.pad()}};
}

std::size_t MaskedSide::masked_count() const {
  std::size_t n = 0;
  for (const auto& p : positions) n += p.size();
  return n;
}

MaskedSide apply_masking(const std::vector<enc::TokenSequence>& seqs, const MaskConfig& cfg, Rng& rng) {
  if (cfg.p < 0.0 || cfg.p >= 1.0) throw std::invalid_argument("apply_masking: p must be in [0, 1)");
  const std::set<tok::TokenId> skip(cfg.never_masked.begin(), cfg.never_masked.end());
  std::bernoulli_distribution coin(cfg.p);
  MaskedSide out;
  out.seqs = seqs;
  out.positions.resize(seqs.size());
  out.labels.resize(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto& s = out.seqs[i];
    for (std::size_t t = 0; t < s.ids.size(); ++t) {
      if (!s.attention_mask[t] || skip.count(s.ids[t]) || s.ids[t] == cfg.mask_id) continue;
      if (!coin(rng)) continue;
      out.positions[i].push_back(t);
      out.labels[i].push_back(s.ids[t]);
      s.ids[t] = cfg.mask_id;
    }
  }
  return out;
}

MaskedBatch apply_masking(const std::vector<enc::TokenSequence>& first, const std::vector<enc::TokenSequence>& second,
                          const MaskConfig& cfg, Rng& rng) {
  MaskedBatch mb;
  mb.first = apply_masking(first, cfg, rng);
  mb.second = apply_masking(second, cfg, rng);
  return mb;
}

}  // namespace efuse::batch
