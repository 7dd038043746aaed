#include "efuse/evalharness/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace efuse::eval {

namespace {

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t content_hash(const MultimodalInput& in) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const char tag_i = in.image ? 'I' : '-', tag_t = in.text ? 'T' : '-';
  h = fnv1a(&tag_i, 1, h);
  h = fnv1a(&tag_t, 1, h);
  if (in.image) {
    const std::uint64_t dims[2] = {in.image->height, in.image->width};
    h = fnv1a(dims, sizeof dims, h);
    h = fnv1a(in.image->pixels.data(), in.image->pixels.size() * sizeof(double), h);
  }
  if (in.text) h = fnv1a(in.text->data(), in.text->size(), h);
  return h;
}

double dot(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) throw std::invalid_argument("embedding dimensions differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void normalize(Embedding& e) {
  double n = 0.0;
  for (double v : e) n += v * v;
  n = std::sqrt(n);
  if (n == 0.0) throw std::domain_error("cannot normalize a zero embedding");
  for (double& v : e) v /= n;
}

}  // namespace

Embedder model_embedder(const enc::Model& model, const tok::MultimodalTokenizer& tk) {
  return [&model, &tk](std::span<const MultimodalInput> inputs) { return enc::embed(model, tk, inputs); };
}

Embedder random_embedder(std::uint64_t seed, std::size_t dim) {
  return [seed, dim](std::span<const MultimodalInput> inputs) {
    std::vector<Embedding> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs) {
      std::mt19937_64 rng(content_hash(in) ^ seed);
      std::normal_distribution<double> n(0.0, 1.0);
      Embedding e(dim);
      for (double& v : e) v = n(rng);
      normalize(e);
      out.push_back(std::move(e));
    }
    return out;
  };
}

std::size_t predict(const Embedding& query, const std::vector<Embedding>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("predict: empty candidate pool");
  std::size_t best = 0;
  double best_s = dot(query, candidates[0]);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double s = dot(query, candidates[i]);
    if (s > best_s) {
      best_s = s;
      best = i;
    }
  }
  return best;
}

TaskResult retrieval_accuracy(const Embedder& embed, const std::vector<RetrievalTask>& tasks) {
  TaskResult r;
  if (tasks.empty()) return r;
  r.task = tasks.front().task;
  std::vector<MultimodalInput> inputs;
  for (const auto& t : tasks) {
    if (t.candidates.empty()) throw std::invalid_argument("retrieval_accuracy: task '" + t.task + "' has an empty pool");
    if (t.ground_truth >= t.candidates.size()) throw std::invalid_argument("retrieval_accuracy: ground truth out of range");
    inputs.push_back(t.query);
    inputs.insert(inputs.end(), t.candidates.begin(), t.candidates.end());
  }
  const auto emb = embed(inputs);
  if (emb.size() != inputs.size()) throw std::runtime_error("embedder returned the wrong number of embeddings");
  std::size_t at = 0;
  double inv_pool = 0.0, pool = 0.0;
  for (const auto& t : tasks) {
    const Embedding& q = emb[at++];
    const std::vector<Embedding> cands(emb.begin() + static_cast<std::ptrdiff_t>(at),
                                       emb.begin() + static_cast<std::ptrdiff_t>(at + t.candidates.size()));
    at += t.candidates.size();
    if (predict(q, cands) == t.ground_truth) ++r.correct;
    inv_pool += 1.0 / static_cast<double>(t.candidates.size());
    pool += static_cast<double>(t.candidates.size());
  }
  r.tasks = tasks.size();
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.tasks);
  r.chance = inv_pool / static_cast<double>(r.tasks);
  r.mean_pool_size = pool / static_cast<double>(r.tasks);
  return r;
}

std::vector<TaskResult> evaluate_tasks(const Embedder& embed, const std::vector<RetrievalTask>& tasks) {
  std::map<std::string, std::vector<RetrievalTask>> by_name;
  for (const auto& t : tasks) by_name[t.task].push_back(t);
  std::vector<TaskResult> out;
  for (const auto& [name, group] : by_name) out.push_back(retrieval_accuracy(embed, group));
  return out;
}

double modality_gap(const std::vector<Embedding>& first, const std::vector<Embedding>& second) {
  if (first.empty() || first.size() != second.size()) {
    throw std::invalid_argument("modality_gap: need the same nonzero number of embeddings on both sides");
  }
  const std::size_t d = first.front().size();
  Embedding m1(d, 0.0), m2(d, 0.0);
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (first[i].size() != d || second[i].size() != d) throw std::invalid_argument("modality_gap: dimension mismatch");
    for (std::size_t j = 0; j < d; ++j) {
      m1[j] += first[i][j];
      m2[j] += second[i][j];
    }
  }
  double s = 0.0;
  const double n = static_cast<double>(first.size());
  for (std::size_t j = 0; j < d; ++j) s += (m1[j] / n - m2[j] / n) * (m1[j] / n - m2[j] / n);
  return std::sqrt(s);
}

double modality_gap(const Embedder& embed, const std::vector<std::pair<MultimodalInput, MultimodalInput>>& pairs) {
  std::vector<MultimodalInput> a, b;
  for (const auto& [x, y] : pairs) {
    a.push_back(x);
    b.push_back(y);
  }
  return modality_gap(embed(a), embed(b));
}

std::vector<RetrievalTask> tgit_eval_tasks(const batch::ShapesCorpus& corpus, std::size_t per_kind, std::uint64_t seed) {
  if (per_kind > corpus.count) throw std::invalid_argument("tgit_eval_tasks: more tasks than corpus images");
  std::vector<RetrievalTask> out;
  tgit::Rng rng(seed);
  for (auto kind : tgit::eval_kinds()) {
    for (std::size_t i = 0; i < per_kind; ++i) out.push_back(tgit::build_tgit_pool(corpus.image(i), kind, rng));
  }
  return out;
}

TaskResult shapes_classification(const Embedder& embed, const batch::ShapesCorpus& corpus, std::size_t n,
                                 std::uint64_t seed) {
  static const char* kTemplates[] = {"a photo of a ", "an image of a ", "a drawing of a "};
  const tgit::ShapeType classes[] = {tgit::ShapeType::Circle, tgit::ShapeType::Square, tgit::ShapeType::Triangle};
  std::vector<MultimodalInput> prompts;
  for (auto c : classes) {
    for (const char* t : kTemplates) prompts.push_back(MultimodalInput::of_text(t + std::string(tgit::shape_name(c))));
  }
  const auto pe = embed(prompts);
  std::vector<Embedding> class_emb;
  for (std::size_t c = 0; c < 3; ++c) {
    Embedding m(pe.front().size(), 0.0);
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t j = 0; j < m.size(); ++j) m[j] += pe[c * 3 + t][j];
    }
    normalize(m);
    class_emb.push_back(std::move(m));
  }
  tgit::SceneOptions one;
  one.min_objects = one.max_objects = 1;
  one.min_radius = 0.2;
  one.max_radius = 0.35;
  std::vector<MultimodalInput> images;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const auto scene = tgit::generate_shapes_scene(seed + corpus.base_seed + i, corpus.image_size, one);
    images.push_back(MultimodalInput::of_image(scene.image));
    labels.push_back(static_cast<std::size_t>(scene.objects.front().type));
  }
  const auto ie = embed(images);
  TaskResult r;
  r.task = "shapes_cls";
  r.tasks = n;
  for (std::size_t i = 0; i < n; ++i) r.correct += predict(ie[i], class_emb) == labels[i] ? 1 : 0;
  r.accuracy = n ? static_cast<double>(r.correct) / static_cast<double>(n) : 0.0;
  r.mean_pool_size = 3.0;
  r.chance = 1.0 / 3.0;
  return r;
}

std::map<std::string, std::vector<std::pair<MultimodalInput, MultimodalInput>>> modality_gap_pairs(
    const batch::ShapesCorpus& corpus, std::size_t n, std::uint64_t seed) {
  std::map<std::string, std::vector<std::pair<MultimodalInput, MultimodalInput>>> out;
  tgit::Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto scene = corpus.scene(i % corpus.count);
    const std::string caption = batch::scene_caption(scene);
    const std::size_t o = std::uniform_int_distribution<std::size_t>(0, scene.objects.size() - 1)(rng);
    const std::string region = batch::object_description(scene, o);
    out["I-T"].emplace_back(MultimodalInput::of_image(scene.image), MultimodalInput::of_text(caption));
    out["IT-T"].emplace_back(MultimodalInput::of(scene.image, region), MultimodalInput::of_text("a photo of a" + region.substr(3)));
    out["IT-I"].emplace_back(MultimodalInput::of(scene.image, region), MultimodalInput::of_image(batch::object_crop(scene, o)));
    const auto s = tgit::make_sample(scene.image, tgit::random_spec(tgit::TransformKind::Flip, rng));
    out["IT-IT"].emplace_back(MultimodalInput::of(s.query_image, s.query_text), MultimodalInput::of(s.target_image, caption));
  }
  return out;
}

void add_results(Report& report, const std::string& model, const std::vector<TaskResult>& results) {
  for (const auto& r : results) report.rows.push_back({model, r.task, r.mean_pool_size, r.accuracy, r.chance});
}

void emit_report(const Report& report, const std::string& stem) {
  std::vector<ReportRow> rows = report.rows;
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return std::tie(a.model, a.task) < std::tie(b.model, b.task);
  });
  {
    std::ofstream os(stem + ".csv");
    if (!os) throw std::runtime_error("cannot write report " + stem + ".csv");
    os << "model,task,pool_size,accuracy,chance\n";
    for (const auto& r : rows) {
      os << r.model << ',' << r.task << ',' << fmt(r.pool_size) << ',' << fmt(r.accuracy) << ',' << fmt(r.chance) << '\n';
    }
    if (!os) throw std::runtime_error("write failed for " + stem + ".csv");
  }
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"model", r.model},
                         {"task", r.task},
                         {"pool_size", r.pool_size},
                         {"accuracy", r.accuracy},
                         {"chance", r.chance}});
  }
  nlohmann::ordered_json m = nlohmann::ordered_json::object();
  for (const auto& [model, metrics] : report.metrics) {
    for (const auto& [name, v] : metrics) m[model][name] = v;
  }
  j["metrics"] = m;
  std::ofstream os(stem + ".json");
  if (!os) throw std::runtime_error("cannot write report " + stem + ".json");
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed for " + stem + ".json");
}

}  // namespace efuse::eval
