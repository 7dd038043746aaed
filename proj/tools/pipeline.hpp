#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "efuse/evalharness/evalharness.hpp"
#include "efuse/grounding/grounding.hpp"
#include "run_config.hpp"

namespace efuse::cli {

using Log = std::function<void(const std::string&)>;

/// Training images: indices [0, corpus_size) of a procedural corpus.
batch::ShapesCorpus train_corpus(const RunConfig& cfg);
/// Held-out images, disjoint from the training corpus.
batch::ShapesCorpus eval_corpus(const RunConfig& cfg);

/// k-means codebook over the first codebook_images training images and the
/// template word list.
tok::MultimodalTokenizer build_tokenizer(const RunConfig& cfg);

struct TrainedModel {
  std::string name;
  enc::Model model;
  std::vector<train::TraceRow> trace;
  double seconds = 0.0;
};

/// Trains cfg.train.kind with cfg.seed. Masked modeling is switched off for
/// dual-tower kinds.
TrainedModel train_model(const RunConfig& cfg, const tok::MultimodalTokenizer& tk, const std::string& name,
                         const Log& log = {});

/// Grounding scenes: the configured annotation manifest, or synthetic ones.
struct GroundingData {
  std::vector<ground::AnnotatedImage> manifest;
  ground::ImageLoader load;
};
GroundingData grounding_data(const RunConfig& cfg);

/// Evaluation tasks named in cfg.eval.tasks (TGIT kinds, vg_crop, oi_crop, oi_pos).
std::vector<RetrievalTask> build_eval_tasks(const RunConfig& cfg);

/// I-T, IT-T, IT-I and IT-IT gaps on held-out images.
std::map<std::string, double> modality_gaps(const eval::Embedder& embed, const RunConfig& cfg);

/// Mean accuracy over the TGIT rows of `results`.
double tgit_mean(const std::vector<eval::TaskResult>& results);

struct Table3Options {
  /// Also train fuselip without hard negatives and without masked modeling.
  bool ablations = false;
  /// Write checkpoints and loss traces next to the report.
  bool save_models = true;
};

struct Table3Result {
  eval::Report report;
  std::map<std::string, std::vector<eval::TaskResult>> results;
  std::map<std::string, double> train_seconds;
};

/// Trains fuselip and dual_sf with the same seed, data and budget, evaluates
/// both and writes table3.csv / table3.json (long form), table3_wide.csv
/// (models x tasks) and, with ablations, table4.csv. Timing goes to
/// timing.json so the report itself is deterministic.
Table3Result reproduce_table3(const RunConfig& cfg, const std::string& out_dir, const Table3Options& opts,
                              const Log& log = {});

/// Writes rows as a models x tasks table, models in the given order.
void write_wide_csv(const eval::Report& report, const std::vector<std::string>& models,
                    const std::vector<std::string>& tasks, const std::string& path);

/// Writes the shapes corpus, TGIT training manifests and synthetic grounding
/// annotations under out_dir.
void generate_data(const RunConfig& cfg, const std::string& out_dir, const Log& log = {});

}  // namespace efuse::cli
