#include "efuse/trainer/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "efuse/losses/losses.hpp"
#include "efuse/numcore/ops.hpp"

namespace efuse::train {

namespace {

constexpr std::uint64_t kDataSeedMix = 0x9E3779B97F4A7C15ull;
constexpr std::uint64_t kMaskSeedMix = 0xD1B54A32D192ED03ull;

std::vector<enc::TokenSequence> sequences(const batch::Batch& b, bool first, const tok::MultimodalTokenizer& tk,
                                          std::size_t context) {
  std::vector<enc::TokenSequence> out;
  out.reserve(b.pairs.size());
  for (const auto& p : b.pairs) out.push_back(enc::build_sequence(first ? p.first : p.second, tk, context));
  return out;
}

}  // namespace

DivergenceError::DivergenceError(std::int64_t step, const std::string& what)
    : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

void TrainConfig::validate() const {
  if (steps <= 0) throw std::invalid_argument("steps must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(lr >= 0.0)) throw std::invalid_argument("lr must be non-negative");
  if (warmup < 0 || warmup >= steps) throw std::invalid_argument("warmup must be in [0, steps)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (!(clip > 0.0)) throw std::invalid_argument("clip must be positive");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be non-negative");
  if (!(mask_p >= 0.0 && mask_p < 1.0)) throw std::invalid_argument("mask_p must be in [0, 1)");
  if (mmm && kind != enc::ModelKind::FuseLip) {
    throw std::invalid_argument("the masked modeling loss needs the fused encoder; disable mmm for " +
                                std::string(enc::model_kind_name(kind)));
  }
  if (task_weights.empty()) throw std::invalid_argument("task_weights is empty");
}

std::vector<batch::StreamSpec> make_streams(const TrainConfig& cfg) {
  std::vector<batch::StreamSpec> out;
  for (const auto& [name, w] : cfg.task_weights) {
    if (w <= 0.0) continue;
    std::unique_ptr<batch::TaskStream> s;
    if (name == "caption") {
      s = batch::make_caption_stream(cfg.corpus);
    } else if (name == "vg_crop") {
      s = batch::make_vg_crop_stream(cfg.corpus);
    } else {
      s = batch::make_tgit_stream(tgit::parse_kind(name), cfg.corpus);
    }
    out.push_back({std::move(s), w});
  }
  if (out.empty()) throw std::invalid_argument("no task has a positive weight");
  return out;
}

StepResult compute_step(const enc::Model& model, const tok::MultimodalTokenizer& tk, const batch::Batch& b,
                        const TrainConfig& cfg, batch::Rng& rng) {
  const std::size_t n = b.pairs.size();
  nc::Graph g(&model.params);
  nc::Var e1, e2, mmm;
  bool use_mmm = false;
  std::size_t masked = 0;

  if (model.kind == enc::ModelKind::FuseLip) {
    auto s1 = sequences(b, true, tk, model.config.context);
    auto s2 = sequences(b, false, tk, model.config.context);
    std::vector<std::vector<std::size_t>> pos1, pos2;
    std::vector<std::vector<tok::TokenId>> lab1, lab2;
    if (cfg.mmm) {
      auto mb = batch::apply_masking(s1, s2, batch::default_mask_config(tk.vocab, cfg.mask_p), rng);
      s1 = std::move(mb.first.seqs);
      s2 = std::move(mb.second.seqs);
      pos1 = std::move(mb.first.positions);
      pos2 = std::move(mb.second.positions);
      lab1 = std::move(mb.first.labels);
      lab2 = std::move(mb.second.labels);
    }
    std::vector<enc::TokenSequence> all = std::move(s1);
    all.insert(all.end(), std::make_move_iterator(s2.begin()), std::make_move_iterator(s2.end()));
    const enc::TowerOutput out = enc::encode_tower(g, model.config, "enc", all);
    e1 = nc::slice_rows(out.embedding, 0, n);
    e2 = nc::slice_rows(out.embedding, n, 2 * n);
    if (cfg.mmm) {
      use_mmm = true;
      std::vector<std::size_t> rows, labels;
      const std::size_t T = out.seq_len;
      for (std::size_t side = 0; side < 2; ++side) {
        const auto& pos = side ? pos2 : pos1;
        const auto& lab = side ? lab2 : lab1;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < pos[i].size(); ++j) {
            rows.push_back((side * n + i) * T + pos[i][j]);
            labels.push_back(lab[i][j]);
          }
        }
      }
      masked = rows.size();
      mmm = rows.empty() ? g.constant(nc::Tensor::scalar(0.0))
                         : loss::mmm_loss(g, enc::predict_masked(g, out.hidden, rows), labels, n);
    }
  } else {
    std::vector<MultimodalInput> inputs;
    inputs.reserve(2 * n);
    for (const auto& p : b.pairs) inputs.push_back(p.first);
    for (const auto& p : b.pairs) inputs.push_back(p.second);
    const nc::Var e = enc::embed_batch(g, model, tk, inputs);
    e1 = nc::slice_rows(e, 0, n);
    e2 = nc::slice_rows(e, n, 2 * n);
  }

  const nc::Var con = loss::siglip_mm_loss(e1, e2, loss::diagonal_labels(n), g.param("loss.log_t"), g.param("loss.b"));
  const nc::Var total = use_mmm ? loss::total_loss(con, mmm, cfg.alpha) : con;
  auto vg = nc::forward_backward(g, total);
  StepResult r;
  r.contrastive = con.value().item();
  r.mmm = use_mmm ? mmm.value().item() : 0.0;
  r.total = vg.value;
  r.grads = std::move(vg.grads);
  r.masked_positions = masked;
  return r;
}

TrainResult train(const TrainConfig& cfg, const enc::ModelConfig& model_cfg, const tok::MultimodalTokenizer& tk,
                  const StepCallback& on_step) {
  cfg.validate();
  enc::ModelConfig mc = model_cfg;
  mc.vocab_size = tk.vocab.size();
  TrainResult result{enc::init_model(cfg.kind, mc, cfg.seed), {}};
  enc::Model& model = result.model;

  batch::BatchComposer composer(make_streams(cfg), cfg.batch_size, cfg.hard_negatives);
  // separate streams so every model kind sees the same batches
  batch::Rng data_rng(cfg.seed ^ kDataSeedMix);
  batch::Rng mask_rng(cfg.seed ^ kMaskSeedMix);

  nc::OptimState state;
  state.config.weight_decay = cfg.weight_decay;
  if (!cfg.decay_temperature) state.no_decay = {"loss.log_t", "loss.b"};

  result.trace.reserve(static_cast<std::size_t>(cfg.steps));
  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    const batch::Batch b = composer.compose(data_rng);
    StepResult r;
    try {
      r = compute_step(model, tk, b, cfg, mask_rng);
    } catch (const nc::NonFiniteError& e) {
      throw DivergenceError(step, e.what());
    }
    if (!std::isfinite(r.total)) throw DivergenceError(step, "loss is " + std::to_string(r.total));
    nc::clip_grad_norm(r.grads, cfg.clip);
    const double lr = nc::cosine_lr(step, cfg.warmup, cfg.steps, cfg.lr);
    try {
      nc::adamw_step(model.params, r.grads, state, lr);
    } catch (const nc::NonFiniteError& e) {
      throw DivergenceError(step, e.what());
    }
    TraceRow row{step, lr, r.contrastive, r.mmm, r.total};
    result.trace.push_back(row);
    if (on_step) on_step(row);
  }
  return result;
}

void write_trace(const std::vector<TraceRow>& trace, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write trace " + path);
  os << "step,lr,contrastive,mmm,total\n";
  char buf[160];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(r.step), r.lr,
                  r.contrastive, r.mmm, r.total);
    os << buf;
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

}  // namespace efuse::train
