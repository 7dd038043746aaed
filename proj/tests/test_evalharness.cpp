#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "efuse/evalharness/evalharness.hpp"
#include "efuse/grounding/grounding.hpp"
#include "fixtures.hpp"

using namespace efuse;
using namespace efuse::eval;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Embedder constant_embedder() {
  return [](std::span<const MultimodalInput> in) { return std::vector<Embedding>(in.size(), Embedding{1.0, 0.0}); };
}

/// Accuracy must sit within 3 standard errors of mean(1 / pool size).
void check_chance(const TaskResult& r) {
  const double se = std::sqrt(r.chance * (1.0 - r.chance) / static_cast<double>(r.tasks));
  INFO(r.task << " accuracy " << r.accuracy << " chance " << r.chance << " n " << r.tasks);
  CHECK(std::abs(r.accuracy - r.chance) <= 3.0 * se);
}

}  // namespace

TEST_CASE("predict picks the largest dot product, lowest index on ties") {
  CHECK(predict({1.0, 0.0}, {{0.0, 1.0}, {0.6, 0.8}, {0.6, -0.8}}) == 1);
  CHECK(predict({1.0, 0.0}, {{0.0, 1.0}, {0.0, -1.0}}) == 0);
  CHECK_THROWS_AS(predict({1.0}, {}), std::invalid_argument);
  CHECK_THROWS_AS(predict({1.0, 0.0}, {{1.0}}), std::invalid_argument);
}

TEST_CASE("constant model always picks the first candidate") {
  batch::ShapesCorpus corpus{500, 50, 32};
  const auto tasks = tgit_eval_tasks(corpus, 30, 3);
  for (const auto& r : evaluate_tasks(constant_embedder(), tasks)) {
    std::size_t first = 0;
    for (const auto& t : tasks) first += t.task == r.task && t.ground_truth == 0 ? 1 : 0;
    CHECK(r.correct == first);
  }
}

TEST_CASE("pool statistics and errors") {
  RetrievalTask t;
  t.task = "toy";
  t.query = MultimodalInput::of_text("a");
  t.candidates = {MultimodalInput::of_text("a"), MultimodalInput::of_text("b")};
  RetrievalTask u = t;
  u.candidates.push_back(MultimodalInput::of_text("c"));
  u.candidates.push_back(MultimodalInput::of_text("d"));
  const auto r = retrieval_accuracy(random_embedder(0, 8), {t, u});
  CHECK(r.tasks == 2);
  CHECK(r.correct == 2);  // the query text is a candidate, so the same content wins
  CHECK(r.mean_pool_size == 3.0);
  CHECK(r.chance == doctest::Approx(0.375));
  u.candidates.clear();
  CHECK_THROWS_AS(retrieval_accuracy(random_embedder(0, 8), {u}), std::invalid_argument);
  t.ground_truth = 2;
  CHECK_THROWS_AS(retrieval_accuracy(random_embedder(0, 8), {t}), std::invalid_argument);
}

TEST_CASE("random embedder is a fixed function of content") {
  const auto e = random_embedder(4, 16);
  const std::vector<MultimodalInput> in = {MultimodalInput::of_text("x"), MultimodalInput::of_image(fixtures::image(1)),
                                           MultimodalInput::of(fixtures::image(1), "x"), MultimodalInput::of_text("x")};
  const auto a = e(in);
  CHECK(a[0] == a[3]);
  CHECK(a[0] != a[2]);
  CHECK(a[1] != a[2]);
  CHECK(a == e(in));
  CHECK(random_embedder(5, 16)(in)[0] != a[0]);
  for (const auto& v : a) {
    double n = 0.0;
    for (double x : v) n += x * x;
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("random model scores at chance on every task family") {
  batch::ShapesCorpus corpus{1000000, 1000, 32};
  const auto embed = random_embedder(11, 32);
  const auto tgit_results = evaluate_tasks(embed, tgit_eval_tasks(corpus, 1000, 5));
  CHECK(tgit_results.size() == 5);
  for (const auto& r : tgit_results) {
    CHECK(r.tasks == 1000);
    check_chance(r);
  }
  const auto g = ground::synthetic_grounding(60, 0);
  std::map<std::string, Image> pixels;
  for (std::size_t i = 0; i < g.manifest.size(); ++i) pixels[g.manifest[i].image] = g.images[i];
  const ground::ImageLoader load = [&](const ground::AnnotatedImage& ai) { return pixels.at(ai.image); };
  std::vector<ground::RegionTask> regions = ground::build_oi_crop_tasks(g.manifest, 1);
  const auto pos = ground::build_oi_pos_tasks(g.manifest, 1);
  regions.insert(regions.end(), pos.begin(), pos.end());
  ground::Rng rng(2);
  for (std::size_t i = 0; i < g.manifest.size(); ++i) {
    if (auto t = ground::build_vg_crop_task(g.manifest[i], i, rng)) regions.push_back(*t);
  }
  const auto results = evaluate_tasks(embed, ground::materialize(regions, g.manifest, load, 32));
  CHECK(results.size() == 3);
  for (const auto& r : results) check_chance(r);
}

TEST_CASE("modality gap") {
  const std::vector<Embedding> a = {{1.0, 0.0}, {0.0, 1.0}, {0.6, 0.8}};
  CHECK(modality_gap(a, a) <= 1e-12);
  const std::vector<Embedding> b = {{0.0, 1.0}, {1.0, 0.0}, {0.8, 0.6}};
  CHECK(modality_gap(a, b) == doctest::Approx(std::sqrt(2.0) * 0.2 / 3.0));
  CHECK(modality_gap({{1.0, 0.0}}, {{-1.0, 0.0}}) == doctest::Approx(2.0));
  CHECK_THROWS_AS(modality_gap(a, {{1.0, 0.0}}), std::invalid_argument);
  CHECK_THROWS_AS(modality_gap(std::vector<Embedding>{}, std::vector<Embedding>{}), std::invalid_argument);

  batch::ShapesCorpus corpus{0, 20, 32};
  const auto pairs = modality_gap_pairs(corpus, 10, 1);
  CHECK(pairs.size() == 4);
  for (const char* k : {"I-T", "IT-T", "IT-I", "IT-IT"}) CHECK(pairs.at(k).size() == 10);
  std::vector<std::pair<MultimodalInput, MultimodalInput>> same;
  for (const auto& [x, y] : pairs.at("IT-I")) same.emplace_back(x, x);
  CHECK(modality_gap(random_embedder(1, 16), same) <= 1e-12);
}

TEST_CASE("shapes classification uses three classes") {
  batch::ShapesCorpus corpus{0, 20, 32};
  const auto r = shapes_classification(random_embedder(3, 16), corpus, 30, 9);
  CHECK(r.tasks == 30);
  CHECK(r.chance == doctest::Approx(1.0 / 3.0));
  CHECK(r.mean_pool_size == 3.0);
}

TEST_CASE("report files") {
  Report rep;
  add_results(rep, "zeta", {{"flip", 10, 7, 0.7, 3.0, 1.0 / 3.0}});
  add_results(rep, "alpha", {{"rotate", 4, 1, 0.25, 18.0, 1.0 / 18.0}, {"crop", 2, 2, 1.0, 9.0, 1.0 / 9.0}});
  rep.metrics["alpha"]["gap_I-T"] = 0.5;
  const auto dir = std::filesystem::temp_directory_path();
  const auto stem = (dir / "efuse_report").string();
  emit_report(rep, stem);
  CHECK(slurp(stem + ".csv") ==
        "model,task,pool_size,accuracy,chance\n"
        "alpha,crop,9.000000,1.000000,0.111111\n"
        "alpha,rotate,18.000000,0.250000,0.055556\n"
        "zeta,flip,3.000000,0.700000,0.333333\n");
  const std::string json = slurp(stem + ".json");
  CHECK(json.find("\"gap_I-T\": 0.5") != std::string::npos);
  emit_report(rep, stem + "_again");
  CHECK(slurp(stem + "_again.csv") == slurp(stem + ".csv"));
  CHECK(slurp(stem + "_again.json") == json);
}
