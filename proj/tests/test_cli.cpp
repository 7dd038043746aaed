#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "run_config.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string output;
};

/// Runs the command-line tool with stderr folded into the captured output.
Run run_tool(const std::string& args) {
  const std::string cmd = std::string(EFUSE_TOOL) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  Run r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("efuse_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

/// Config for runs over a handful of images.
std::string small_config(const fs::path& dir) {
  const auto p = dir / "small.json";
  write(p, R"({"tokenizer": {"codebook_size": 16, "codebook_images": 2}, "data": {"eval_images": 30},)"
           R"( "eval": {"per_kind": 10, "gap_pairs": 8}})");
  return " --config " + p.string();
}

}  // namespace

TEST_CASE("eval with a missing checkpoint fails and names the path") {
  const auto dir = scratch("missing");
  const auto ckpt = (dir / "nowhere.flip").string();
  const auto r = run_tool("eval --checkpoint " + ckpt);
  CHECK(r.code != 0);
  CHECK(r.output.find(ckpt) != std::string::npos);
}

TEST_CASE("gen-data with the same seed writes identical files") {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  const std::string flags = small_config(scratch("gen_cfg")) +
                            " --seed 7 --corpus-size 12 --manifest-images 3 --grounding-images 2";
  REQUIRE(run_tool("gen-data --out " + a.string() + flags).code == 0);
  REQUIRE(run_tool("gen-data --out " + b.string() + flags).code == 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), a);
    INFO(rel.string());
    CHECK(slurp(e.path()) == slurp(b / rel));
  }
  CHECK(files > 12);
  CHECK(fs::exists(a / "corpus.jsonl"));
  CHECK(fs::exists(a / "grounding" / "annotations.jsonl"));
  for (const char* kind : {"crop", "rotate", "flip", "jitter", "colorize"}) {
    CHECK(fs::exists(a / "tgit" / (std::string(kind) + ".jsonl")));
  }
}

TEST_CASE("gen-data with another seed writes different images") {
  const auto a = scratch("seed_a"), b = scratch("seed_b");
  const std::string flags = small_config(scratch("seed_cfg")) +
                            " --corpus-size 3 --manifest-images 1 --grounding-images 1";
  REQUIRE(run_tool("gen-data --seed 1 --out " + a.string() + flags).code == 0);
  REQUIRE(run_tool("gen-data --seed 2 --out " + b.string() + flags).code == 0);
  CHECK(slurp(a / "corpus" / "img_00000.fimg") != slurp(b / "corpus" / "img_00000.fimg"));
}

TEST_CASE("config errors name the offending key") {
  const auto dir = scratch("config");
  write(dir / "unknown.json", R"({"train": {"stepz": 10}})");
  auto r = run_tool("train --config " + (dir / "unknown.json").string() + " --out " + (dir / "run").string());
  CHECK(r.code != 0);
  CHECK(r.output.find("train.stepz") != std::string::npos);

  write(dir / "badtype.json", R"({"model": {"width": "wide"}})");
  r = run_tool("train --config " + (dir / "badtype.json").string() + " --out " + (dir / "run").string());
  CHECK(r.code != 0);
  CHECK(r.output.find("model.width") != std::string::npos);
}

TEST_CASE("bad flags exit nonzero with usage") {
  auto r = run_tool("train --no-such-flag");
  CHECK(r.code != 0);
  r = run_tool("");
  CHECK(r.code != 0);
  CHECK(r.output.find("gen-data") != std::string::npos);
}

TEST_CASE("config round trip through JSON keeps every key") {
  efuse::cli::RunConfig cfg;
  cfg.seed = 11;
  cfg.model.mlp_hidden = 96;
  cfg.train.steps = 17;
  cfg.eval.tasks = {"flip", "oi_pos"};
  cfg.train.task_weights = {{"flip", 2.0}, {"crop", 0.5}};
  const auto dir = scratch("roundtrip");
  write(dir / "cfg.json", cfg.to_json().dump(2));
  const auto back = efuse::cli::load_config((dir / "cfg.json").string());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.train.task_weights == cfg.train.task_weights);
  const auto keys = efuse::cli::config_keys();
  CHECK(keys.size() == 33);
}

TEST_CASE("train and eval a tiny run end to end") {
  const auto dir = scratch("tiny");
  const std::string small = small_config(dir) + " --seed 3 --corpus-size 40 --steps 3 --batch-size 16";
  REQUIRE(run_tool("train --out " + (dir / "run").string() + small).code == 0);
  CHECK(fs::exists(dir / "run" / "model.flip"));
  CHECK(fs::exists(dir / "run" / "trace.csv"));
  const auto r = run_tool("eval --checkpoint " + (dir / "run" / "model.flip").string() + small_config(dir));
  CHECK(r.code == 0);
  const auto csv = slurp(dir / "run" / "eval.csv");
  CHECK(csv.rfind("model,task,pool_size,accuracy,chance\n", 0) == 0);
  CHECK(csv.find("model,flip,") != std::string::npos);
}
