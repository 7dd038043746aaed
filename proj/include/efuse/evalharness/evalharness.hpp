#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "efuse/batcher/batcher.hpp"
#include "efuse/data.hpp"
#include "efuse/encoder/encoder.hpp"

namespace efuse::eval {

using Embedding = std::vector<double>;
/// Maps inputs to unit-norm embeddings, one per input, in order.
using Embedder = std::function<std::vector<Embedding>(std::span<const MultimodalInput>)>;

Embedder model_embedder(const enc::Model& model, const tok::MultimodalTokenizer& tk);
/// Fixed random model: every distinct input gets an independent random unit
/// vector derived from a hash of its content and the seed.
Embedder random_embedder(std::uint64_t seed, std::size_t dim);

/// Index of the candidate with the largest dot product; ties go to the lowest index.
std::size_t predict(const Embedding& query, const std::vector<Embedding>& candidates);

struct TaskResult {
  std::string task;
  std::size_t tasks = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double mean_pool_size = 0.0;
  double chance = 0.0;  // mean of 1 / pool size
};

/// Accuracy over tasks sharing one task name. Empty pools are an error.
TaskResult retrieval_accuracy(const Embedder& embed, const std::vector<RetrievalTask>& tasks);

/// Groups tasks by name and scores each group.
std::vector<TaskResult> evaluate_tasks(const Embedder& embed, const std::vector<RetrievalTask>& tasks);

/// || mean(a) - mean(b) ||_2 for paired embeddings.
double modality_gap(const std::vector<Embedding>& first, const std::vector<Embedding>& second);
double modality_gap(const Embedder& embed, const std::vector<std::pair<MultimodalInput, MultimodalInput>>& pairs);

/// Held-out TGIT pools: `per_kind` tasks of each evaluation kind.
std::vector<RetrievalTask> tgit_eval_tasks(const batch::ShapesCorpus& corpus, std::size_t per_kind, std::uint64_t seed);

/// Shapes classification: image -> one of the shape classes, each class text
/// embedding being the normalized mean over 3 prompt templates.
TaskResult shapes_classification(const Embedder& embed, const batch::ShapesCorpus& corpus, std::size_t n,
                                 std::uint64_t seed);

/// Pairs for the four modality-gap combinations: I-T, IT-T, IT-I, IT-IT.
std::map<std::string, std::vector<std::pair<MultimodalInput, MultimodalInput>>> modality_gap_pairs(
    const batch::ShapesCorpus& corpus, std::size_t n, std::uint64_t seed);

struct ReportRow {
  std::string model;
  std::string task;
  double pool_size = 0.0;
  double accuracy = 0.0;
  double chance = 0.0;
};

struct Report {
  std::vector<ReportRow> rows;
  /// Extra named scalars per model (modality gaps, ablation deltas).
  std::map<std::string, std::map<std::string, double>> metrics;
};

void add_results(Report& report, const std::string& model, const std::vector<TaskResult>& results);

/// Writes `<stem>.csv` (model,task,pool_size,accuracy,chance; sorted by
/// model then task) and `<stem>.json`. Output is byte-stable.
void emit_report(const Report& report, const std::string& stem);

}  // namespace efuse::eval
