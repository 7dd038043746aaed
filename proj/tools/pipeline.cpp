#include "pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace efuse::cli {

namespace fs = std::filesystem;

namespace {

// Sub-seeds for the independent random streams of a run.
constexpr std::uint64_t kCorpusStride = 1ull << 28;
constexpr std::uint64_t kEvalOffset = 1ull << 27;
constexpr std::uint64_t kCodebookSeed = 1, kEvalTaskSeed = 2, kGapSeed = 3, kGroundingSeed = 4, kRegionSeed = 5;

const std::set<std::string>& tgit_names() {
  static const std::set<std::string> s = [] {
    std::set<std::string> out;
    for (auto k : tgit::eval_kinds()) out.insert(std::string(tgit::kind_name(k)));
    return out;
  }();
  return s;
}

void note(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path);
}

}  // namespace

batch::ShapesCorpus train_corpus(const RunConfig& cfg) {
  return {cfg.seed * kCorpusStride, cfg.data.corpus_size, cfg.data.image_size};
}

batch::ShapesCorpus eval_corpus(const RunConfig& cfg) {
  return {cfg.seed * kCorpusStride + kEvalOffset, cfg.data.eval_images, cfg.data.image_size};
}

tok::MultimodalTokenizer build_tokenizer(const RunConfig& cfg) {
  const auto corpus = train_corpus(cfg);
  std::vector<Image> imgs;
  imgs.reserve(cfg.tokenizer.codebook_images);
  for (std::size_t i = 0; i < cfg.tokenizer.codebook_images; ++i) imgs.push_back(corpus.image(i));
  tok::Codebook cb = tok::build_codebook(imgs, cfg.tokenizer.codebook_size, cfg.seed + kCodebookSeed);
  tok::UnifiedVocab vocab(tok::collect_words(tgit::template_corpus()), cb.size());
  return tok::MultimodalTokenizer(std::move(vocab), std::move(cb));
}

TrainedModel train_model(const RunConfig& cfg, const tok::MultimodalTokenizer& tk, const std::string& name,
                         const Log& log) {
  train::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.corpus = train_corpus(cfg);
  if (tc.kind != enc::ModelKind::FuseLip) tc.mmm = false;
  const auto t0 = std::chrono::steady_clock::now();
  const std::int64_t every = std::max<std::int64_t>(1, tc.steps / 20);
  auto result = train::train(tc, cfg.model, tk, [&](const train::TraceRow& r) {
    if (r.step % every == 0 || r.step == tc.steps) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "[%s] step %lld/%lld  contrastive %.4f  mmm %.4f  lr %.2e", name.c_str(),
                    static_cast<long long>(r.step), static_cast<long long>(tc.steps), r.contrastive, r.mmm, r.lr);
      note(log, buf);
    }
  });
  TrainedModel out{name, std::move(result.model), std::move(result.trace), 0.0};
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

GroundingData grounding_data(const RunConfig& cfg) {
  GroundingData g;
  if (!cfg.eval.annotations.empty()) {
    g.manifest = ground::read_annotations(cfg.eval.annotations);
    const std::string root =
        cfg.eval.images_root.empty() ? fs::path(cfg.eval.annotations).parent_path().string() : cfg.eval.images_root;
    g.load = ground::fimg_loader(root);
    return g;
  }
  auto synth = ground::synthetic_grounding(cfg.data.grounding_images, cfg.seed + kGroundingSeed, cfg.data.grounding_size);
  auto pixels = std::make_shared<std::map<std::string, Image>>();
  for (std::size_t i = 0; i < synth.manifest.size(); ++i) (*pixels)[synth.manifest[i].image] = synth.images[i];
  g.manifest = std::move(synth.manifest);
  g.load = [pixels](const ground::AnnotatedImage& ai) { return pixels->at(ai.image); };
  return g;
}

std::vector<RetrievalTask> build_eval_tasks(const RunConfig& cfg) {
  static const std::set<std::string> region = {"vg_crop", "oi_crop", "oi_pos"};
  bool any_tgit = false, any_region = false;
  for (const auto& t : cfg.eval.tasks) {
    if (tgit_names().count(t)) {
      any_tgit = true;
    } else if (region.count(t)) {
      any_region = true;
    } else {
      throw ConfigError("unknown evaluation task '" + t + "' in eval.tasks");
    }
  }
  const std::set<std::string> wanted(cfg.eval.tasks.begin(), cfg.eval.tasks.end());
  std::vector<RetrievalTask> out;
  if (any_tgit) {
    for (auto& t : eval::tgit_eval_tasks(eval_corpus(cfg), cfg.eval.per_kind, cfg.seed + kEvalTaskSeed)) {
      if (wanted.count(t.task)) out.push_back(std::move(t));
    }
  }
  if (any_region) {
    const GroundingData g = grounding_data(cfg);
    const std::uint64_t seed = cfg.seed + kRegionSeed;
    std::vector<ground::RegionTask> tasks;
    if (wanted.count("vg_crop")) {
      ground::Rng rng(seed);
      for (std::size_t i = 0; i < g.manifest.size(); ++i) {
        if (auto t = ground::build_vg_crop_task(g.manifest[i], i, rng)) tasks.push_back(std::move(*t));
      }
    }
    if (wanted.count("oi_crop")) {
      for (auto& t : ground::build_oi_crop_tasks(g.manifest, seed)) tasks.push_back(std::move(t));
    }
    if (wanted.count("oi_pos")) {
      for (auto& t : ground::build_oi_pos_tasks(g.manifest, seed)) tasks.push_back(std::move(t));
    }
    for (auto& t : ground::materialize(tasks, g.manifest, g.load, cfg.data.image_size)) out.push_back(std::move(t));
  }
  return out;
}

std::map<std::string, double> modality_gaps(const eval::Embedder& embed, const RunConfig& cfg) {
  std::map<std::string, double> out;
  for (const auto& [name, pairs] : eval::modality_gap_pairs(eval_corpus(cfg), cfg.eval.gap_pairs, cfg.seed + kGapSeed)) {
    out["gap_" + name] = eval::modality_gap(embed, pairs);
  }
  return out;
}

double tgit_mean(const std::vector<eval::TaskResult>& results) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : results) {
    if (!tgit_names().count(r.task)) continue;
    s += r.accuracy;
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

void write_wide_csv(const eval::Report& report, const std::vector<std::string>& models,
                    const std::vector<std::string>& tasks, const std::string& path) {
  std::string text = "model";
  for (const auto& t : tasks) text += "," + t;
  text += ",mean\n";
  for (const auto& m : models) {
    text += m;
    double s = 0.0;
    for (const auto& t : tasks) {
      double acc = 0.0;
      bool found = false;
      for (const auto& r : report.rows) {
        if (r.model == m && r.task == t) {
          acc = r.accuracy;
          found = true;
        }
      }
      if (!found) throw std::runtime_error("report has no row for " + m + "/" + t);
      s += acc;
      text += "," + fmt(acc);
    }
    text += "," + fmt(tasks.empty() ? 0.0 : s / static_cast<double>(tasks.size())) + "\n";
  }
  write_text(path, text);
}

Table3Result reproduce_table3(const RunConfig& cfg, const std::string& out_dir, const Table3Options& opts,
                              const Log& log) {
  cfg.validate();
  fs::create_directories(out_dir);
  const auto out = [&](const std::string& f) { return (fs::path(out_dir) / f).string(); };

  note(log, "building tokenizer");
  const auto tk = build_tokenizer(cfg);
  tk.codebook.save(out("codebook.fvq"));
  tk.vocab.save(out("vocab.txt"));
  write_text(out("config.json"), cfg.to_json().dump(2) + "\n");

  note(log, "building evaluation tasks");
  const auto tasks = build_eval_tasks(cfg);

  struct Variant {
    std::string name;
    enc::ModelKind kind;
    bool hard_negatives;
    bool mmm;
  };
  std::vector<Variant> variants = {{"fuselip", enc::ModelKind::FuseLip, cfg.train.hard_negatives, cfg.train.mmm},
                                   {"dual_sf", enc::ModelKind::DualSF, cfg.train.hard_negatives, false}};
  if (opts.ablations) {
    variants.push_back({"fuselip_no_hn", enc::ModelKind::FuseLip, false, cfg.train.mmm});
    variants.push_back({"fuselip_no_mmm", enc::ModelKind::FuseLip, cfg.train.hard_negatives, false});
  }

  Table3Result res;
  for (const auto& v : variants) {
    RunConfig c = cfg;
    c.train.kind = v.kind;
    c.train.hard_negatives = v.hard_negatives;
    c.train.mmm = v.mmm;
    note(log, "training " + v.name);
    TrainedModel tm = train_model(c, tk, v.name, log);
    res.train_seconds[v.name] = tm.seconds;
    if (opts.save_models) {
      enc::save_checkpoint(tm.model, out(v.name + ".flip"));
      train::write_trace(tm.trace, out(v.name + "_trace.csv"));
    }
    note(log, "evaluating " + v.name);
    const auto embed = eval::model_embedder(tm.model, tk);
    auto results = eval::evaluate_tasks(embed, tasks);
    eval::add_results(res.report, v.name, results);
    auto& m = res.report.metrics[v.name];
    m["tgit_mean"] = tgit_mean(results);
    for (const auto& [k, g] : modality_gaps(embed, c)) m[k] = g;
    res.results[v.name] = std::move(results);
  }

  auto acc = [&](const std::string& model, const std::string& task) {
    for (const auto& r : res.results.at(model)) {
      if (r.task == task) return r.accuracy;
    }
    return 0.0;
  };
  auto& cmp = res.report.metrics["comparison"];
  std::vector<std::string> tgit_tasks;
  for (auto k : tgit::eval_kinds()) {
    const std::string t(tgit::kind_name(k));
    if (std::find(cfg.eval.tasks.begin(), cfg.eval.tasks.end(), t) == cfg.eval.tasks.end()) continue;
    tgit_tasks.push_back(t);
    cmp["fuselip_minus_dual_sf_" + t] = acc("fuselip", t) - acc("dual_sf", t);
  }
  if (opts.ablations) {
    cmp["hard_negative_drop"] = res.report.metrics["fuselip"]["tgit_mean"] - res.report.metrics["fuselip_no_hn"]["tgit_mean"];
    cmp["mmm_gain"] = res.report.metrics["fuselip"]["tgit_mean"] - res.report.metrics["fuselip_no_mmm"]["tgit_mean"];
  }

  eval::emit_report(res.report, out("table3"));
  write_wide_csv(res.report, {"fuselip", "dual_sf"}, tgit_tasks, out("table3_wide.csv"));
  if (opts.ablations) {
    std::string t4 = "model,hard_negatives,mmm";
    for (const auto& t : tgit_tasks) t4 += "," + t;
    t4 += ",mean\n";
    for (const auto& v : variants) {
      if (v.kind != enc::ModelKind::FuseLip) continue;
      t4 += v.name + "," + (v.hard_negatives ? "yes" : "no") + "," + (v.mmm ? "yes" : "no");
      for (const auto& t : tgit_tasks) t4 += "," + fmt(acc(v.name, t));
      t4 += "," + fmt(res.report.metrics[v.name]["tgit_mean"]) + "\n";
    }
    write_text(out("table4.csv"), t4);
  }
  nlohmann::ordered_json timing;
  for (const auto& [name, s] : res.train_seconds) timing["train_seconds"][name] = s;
  write_text(out("timing.json"), timing.dump(2) + "\n");
  return res;
}

void generate_data(const RunConfig& cfg, const std::string& out_dir, const Log& log) {
  const fs::path root(out_dir);
  fs::create_directories(root / "corpus");
  const auto corpus = train_corpus(cfg);
  {
    note(log, "writing " + std::to_string(corpus.count) + " corpus images");
    nlohmann::ordered_json lines = nlohmann::ordered_json::array();
    std::string index;
    char name[32];
    for (std::size_t i = 0; i < corpus.count; ++i) {
      const auto scene = corpus.scene(i);
      std::snprintf(name, sizeof name, "img_%05zu.fimg", i);
      save_fimg(scene.image, (root / "corpus" / name).string());
      nlohmann::ordered_json j;
      j["image"] = std::string("corpus/") + name;
      j["caption"] = batch::scene_caption(scene);
      index += j.dump() + "\n";
    }
    write_text((root / "corpus.jsonl").string(), index);
  }

  fs::create_directories(root / "tgit");
  const std::size_t n = std::min(cfg.data.manifest_images, corpus.count);
  tgit::Rng rng(cfg.seed);
  for (auto kind : tgit::eval_kinds()) {
    const std::string kname(tgit::kind_name(kind));
    note(log, "writing " + kname + " manifest");
    fs::create_directories(root / "tgit" / kname);
    std::vector<tgit::ManifestRecord> records;
    char name[64];
    for (std::size_t i = 0; i < n; ++i) {
      const auto group = tgit::hard_negative_group(corpus.image(i), kind, rng);
      for (std::size_t j = 0; j < group.size(); ++j) {
        tgit::ManifestRecord r;
        r.task = kname;
        std::snprintf(name, sizeof name, "%05zu_%zu_q.fimg", i, j);
        r.query_image = "tgit/" + kname + "/" + name;
        save_fimg(group[j].query_image, (root / r.query_image).string());
        r.query_text = group[j].query_text;
        std::snprintf(name, sizeof name, "%05zu_%zu_t.fimg", i, j);
        r.target_image = "tgit/" + kname + "/" + name;
        save_fimg(group[j].target_image, (root / r.target_image).string());
        r.group = i;
        records.push_back(std::move(r));
      }
    }
    tgit::write_manifest((root / "tgit" / (kname + ".jsonl")).string(), records);
  }

  note(log, "writing synthetic grounding scenes");
  fs::create_directories(root / "grounding");
  const auto g = ground::synthetic_grounding(cfg.data.grounding_images, cfg.seed + kGroundingSeed, cfg.data.grounding_size);
  for (std::size_t i = 0; i < g.manifest.size(); ++i) save_fimg(g.images[i], (root / "grounding" / g.manifest[i].image).string());
  ground::write_annotations((root / "grounding" / "annotations.jsonl").string(), g.manifest);
}

}  // namespace efuse::cli
