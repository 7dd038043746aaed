#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "efuse/numcore/gradcheck.hpp"
#include "pipeline.hpp"

using namespace efuse;
using namespace efuse::cli;
namespace fs = std::filesystem;

namespace {

/// Flags shared by the subcommands that read a run config.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> steps;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::string> kind;
  bool no_hard_negatives = false;
  bool no_mmm = false;
  std::optional<std::size_t> corpus_size;
  std::optional<std::size_t> per_kind;
  std::optional<std::string> tasks;

  void add_config(CLI::App* app) {
    app->add_option("--config", config, "JSON run config (flags override it)")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "Seed for every random stream of the run");
  }
  void add_train(CLI::App* app) {
    app->add_option("--steps", steps, "Training steps");
    app->add_option("--batch-size", batch_size, "Pairs per batch");
    app->add_option("--lr", lr, "Peak learning rate");
    app->add_option("--kind", kind, "Model kind: fuselip, dual_sf or dual_mlf");
    app->add_flag("--no-hard-negatives", no_hard_negatives, "Compose batches from independent pairs");
    app->add_flag("--no-mmm", no_mmm, "Disable the masked modeling loss");
    app->add_option("--corpus-size", corpus_size, "Training images");
  }
  void add_eval(CLI::App* app) {
    app->add_option("--tasks", tasks, "Comma-separated evaluation tasks");
    app->add_option("--per-kind", per_kind, "TGIT evaluation tasks per kind");
  }

  RunConfig resolve() const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_config(config);
    if (seed) cfg.seed = *seed;
    if (steps) {
      cfg.train.steps = *steps;
      cfg.train.warmup = std::min(cfg.train.warmup, std::max<std::int64_t>(0, *steps / 10));
    }
    if (batch_size) cfg.train.batch_size = *batch_size;
    if (lr) cfg.train.lr = *lr;
    if (kind) cfg.train.kind = enc::parse_model_kind(*kind);
    if (no_hard_negatives) cfg.train.hard_negatives = false;
    // masked modeling needs the fused encoder's token outputs
    if (no_mmm || cfg.train.kind != enc::ModelKind::FuseLip) cfg.train.mmm = false;
    if (corpus_size) cfg.data.corpus_size = *corpus_size;
    if (per_kind) cfg.eval.per_kind = *per_kind;
    if (tasks) {
      cfg.eval.tasks.clear();
      std::stringstream ss(*tasks);
      for (std::string t; std::getline(ss, t, ',');) {
        if (!t.empty()) cfg.eval.tasks.push_back(t);
      }
    }
    return cfg;
  }
};

void log_line(const std::string& s) { std::cerr << s << std::endl; }

void print_results(const std::string& model, const std::vector<eval::TaskResult>& results) {
  std::printf("%-16s %-10s %6s %9s %9s\n", "model", "task", "pool", "accuracy", "chance");
  for (const auto& r : results) {
    std::printf("%-16s %-10s %6.2f %9.4f %9.4f\n", model.c_str(), r.task.c_str(), r.mean_pool_size, r.accuracy, r.chance);
  }
}

std::string sibling(const std::string& path, const std::string& name) {
  return (fs::path(path).parent_path() / name).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Early-fusion multimodal contrastive embedding toolkit"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Common gen, cb, tr, ev, t3;
  std::string gen_out, cb_out, tr_out = "run", ev_checkpoint, ev_codebook, ev_vocab, ev_out, t3_out = "table3";
  bool t3_ablations = false, t3_no_models = false, ev_random = false;
  std::optional<std::size_t> gen_manifest, gen_grounding, cb_size, cb_images;
  std::uint64_t gc_seed = 0;
  int gc_instances = 20;
  double gc_h = 1e-5, gc_tol = 1e-4;

  auto* g = app.add_subcommand("gen-data", "Write the shapes corpus, TGIT manifests and grounding scenes");
  gen.add_config(g);
  g->add_option("--out", gen_out, "Output directory")->required();
  g->add_option("--corpus-size", gen.corpus_size, "Corpus images to write");
  g->add_option("--manifest-images", gen_manifest, "Images per TGIT manifest");
  g->add_option("--grounding-images", gen_grounding, "Synthetic grounding scenes");

  auto* c = app.add_subcommand("build-codebook", "Fit the image codebook and write it with the vocabulary");
  cb.add_config(c);
  c->add_option("--out", cb_out, "Output directory")->required();
  c->add_option("--codebook-size", cb_size, "Number of centroids");
  c->add_option("--codebook-images", cb_images, "Corpus images used for fitting");

  auto* t = app.add_subcommand("train", "Train one model and write its checkpoint and loss trace");
  tr.add_config(t);
  tr.add_train(t);
  t->add_option("--out", tr_out, "Output directory")->capture_default_str();

  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on retrieval tasks");
  ev.add_config(e);
  ev.add_eval(e);
  e->add_option("--checkpoint", ev_checkpoint, "Model checkpoint")->required();
  e->add_option("--codebook", ev_codebook, "Codebook file (default: next to the checkpoint)");
  e->add_option("--vocab", ev_vocab, "Vocabulary file (default: next to the checkpoint)");
  e->add_option("--out", ev_out, "Report stem (default: <checkpoint dir>/eval)");
  e->add_flag("--random", ev_random, "Score a fixed random embedder instead of the checkpoint");

  auto* r = app.add_subcommand("reproduce-table3", "Train fuselip and dual_sf on TGIT and compare them");
  t3.add_config(r);
  t3.add_train(r);
  t3.add_eval(r);
  r->add_option("--out", t3_out, "Output directory")->capture_default_str();
  r->add_flag("--ablations", t3_ablations, "Also train fuselip without hard negatives and without masked modeling");
  r->add_flag("--no-save-models", t3_no_models, "Skip writing checkpoints and traces");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gc->add_option("--seed", gc_seed, "Seed for inputs and projections")->capture_default_str();
  gc->add_option("--instances", gc_instances, "Random instances per op")->capture_default_str();
  gc->add_option("--step", gc_h, "Central difference step")->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "Largest accepted relative error")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*g) {
      RunConfig cfg = gen.resolve();
      if (gen_manifest) cfg.data.manifest_images = *gen_manifest;
      if (gen_grounding) cfg.data.grounding_images = *gen_grounding;
      cfg.validate();
      generate_data(cfg, gen_out, log_line);
      return 0;
    }
    if (*c) {
      RunConfig cfg = cb.resolve();
      if (cb_size) cfg.tokenizer.codebook_size = *cb_size;
      if (cb_images) cfg.tokenizer.codebook_images = *cb_images;
      cfg.validate();
      fs::create_directories(cb_out);
      const auto tk = build_tokenizer(cfg);
      tk.codebook.save((fs::path(cb_out) / "codebook.fvq").string());
      tk.vocab.save((fs::path(cb_out) / "vocab.txt").string());
      std::vector<Image> imgs;
      const auto corpus = train_corpus(cfg);
      for (std::size_t i = 0; i < cfg.tokenizer.codebook_images; ++i) imgs.push_back(corpus.image(i));
      std::printf("codebook %zu centroids, vocab %zu tokens, patch mse %.6f\n", tk.codebook.size(), tk.vocab.size(),
                  tok::quantization_mse(imgs, tk.codebook));
      return 0;
    }
    if (*t) {
      const RunConfig cfg = tr.resolve();
      cfg.validate();
      fs::create_directories(tr_out);
      const auto tk = build_tokenizer(cfg);
      const auto out = [&](const std::string& f) { return (fs::path(tr_out) / f).string(); };
      tk.codebook.save(out("codebook.fvq"));
      tk.vocab.save(out("vocab.txt"));
      {
        std::ofstream os(out("config.json"));
        os << cfg.to_json().dump(2) << '\n';
      }
      const auto tm = train_model(cfg, tk, std::string(enc::model_kind_name(cfg.train.kind)), log_line);
      enc::save_checkpoint(tm.model, out("model.flip"));
      train::write_trace(tm.trace, out("trace.csv"));
      std::printf("trained %lld steps in %.1f s; final contrastive %.4f\n", static_cast<long long>(cfg.train.steps),
                  tm.seconds, tm.trace.back().contrastive);
      return 0;
    }
    if (*e) {
      const RunConfig cfg = ev.resolve();
      cfg.validate();
      const std::string codebook = ev_codebook.empty() ? sibling(ev_checkpoint, "codebook.fvq") : ev_codebook;
      const std::string vocab = ev_vocab.empty() ? sibling(ev_checkpoint, "vocab.txt") : ev_vocab;
      const std::string stem = ev_out.empty() ? sibling(ev_checkpoint, "eval") : ev_out;
      const enc::Model model = enc::load_checkpoint(ev_checkpoint);
      const tok::MultimodalTokenizer tk(tok::UnifiedVocab::load(vocab), tok::Codebook::load(codebook));
      if (model.config.vocab_size != tk.vocab.size()) {
        throw std::runtime_error("checkpoint " + ev_checkpoint + " expects " + std::to_string(model.config.vocab_size) +
                                 " tokens but " + vocab + " has " + std::to_string(tk.vocab.size()));
      }
      const std::string name = ev_random ? "random" : fs::path(ev_checkpoint).stem().string();
      const eval::Embedder embed =
          ev_random ? eval::random_embedder(cfg.seed, model.config.width) : eval::model_embedder(model, tk);
      const auto results = eval::evaluate_tasks(embed, build_eval_tasks(cfg));
      eval::Report report;
      eval::add_results(report, name, results);
      report.metrics[name] = modality_gaps(embed, cfg);
      eval::emit_report(report, stem);
      print_results(name, results);
      return 0;
    }
    if (*r) {
      const RunConfig cfg = t3.resolve();
      const auto res = reproduce_table3(cfg, t3_out, {t3_ablations, !t3_no_models}, log_line);
      for (const auto& [name, results] : res.results) print_results(name, results);
      for (const auto& [name, s] : res.train_seconds) std::printf("train %-16s %.1f s\n", name.c_str(), s);
      std::printf("report written to %s\n", (fs::path(t3_out) / "table3.csv").string().c_str());
      return 0;
    }
    if (*gc) {
      const auto results = nc::run_gradcheck_suite(gc_seed, gc_instances, gc_h);
      bool ok = true;
      for (const auto& res : results) {
        const bool pass = res.max_rel_error <= gc_tol && res.instances >= gc_instances;
        ok = ok && pass;
        std::printf("%-14s %3d instances  max rel err %.3e  %s\n", res.op.c_str(), res.instances, res.max_rel_error,
                    pass ? "ok" : "FAIL");
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << std::endl;
    return 1;
  }
  return 1;
}
