#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "efuse/batcher/batcher.hpp"
#include "efuse/encoder/encoder.hpp"
#include "efuse/numcore/optim.hpp"
#include "efuse/tokenizer/tokenizer.hpp"

namespace efuse::train {

struct TrainConfig {
  std::int64_t steps = 5000;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::int64_t warmup = 250;
  double weight_decay = 0.1;
  double clip = 1.0;
  double alpha = 0.25;
  double mask_p = 0.1;
  bool hard_negatives = true;
  bool mmm = true;
  /// t and b are excluded from weight decay unless this is set.
  bool decay_temperature = false;
  enc::ModelKind kind = enc::ModelKind::FuseLip;
  std::uint64_t seed = 0;

  /// Training corpus and task mixture.
  batch::ShapesCorpus corpus{};
  std::vector<std::pair<std::string, double>> task_weights = {
      {"crop", 1.0}, {"rotate", 1.0}, {"flip", 1.0}, {"jitter", 1.0}, {"colorize", 1.0}, {"caption", 1.0},
      {"vg_crop", 1.0}};

  void validate() const;
};

struct TraceRow {
  std::int64_t step = 0;
  double lr = 0.0;
  double contrastive = 0.0;
  double mmm = 0.0;
  double total = 0.0;
};

/// Raised when a loss or gradient becomes non-finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::int64_t step, const std::string& what);
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

std::vector<batch::StreamSpec> make_streams(const TrainConfig& cfg);

/// Gradients and loss parts of one step on a prepared batch.
struct StepResult {
  double contrastive = 0.0;
  double mmm = 0.0;
  double total = 0.0;
  nc::ParamMap grads;
  std::size_t masked_positions = 0;
};

/// Forward and backward for one batch. Masking (fuselip with mmm on) draws
/// from rng; contrastive embeddings come from the masked sequences.
StepResult compute_step(const enc::Model& model, const tok::MultimodalTokenizer& tk, const batch::Batch& b,
                        const TrainConfig& cfg, batch::Rng& rng);

using StepCallback = std::function<void(const TraceRow&)>;

struct TrainResult {
  enc::Model model;
  std::vector<TraceRow> trace;
};

/// Full optimization loop: compose -> mask -> encode -> loss -> backward ->
/// clip -> AdamW with cosine lr. `model_cfg.vocab_size` is taken from tk.
TrainResult train(const TrainConfig& cfg, const enc::ModelConfig& model_cfg, const tok::MultimodalTokenizer& tk,
                  const StepCallback& on_step = {});

/// CSV "step,lr,contrastive,mmm,total" with round-trip precision.
void write_trace(const std::vector<TraceRow>& trace, const std::string& path);

}  // namespace efuse::train
