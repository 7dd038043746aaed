#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "efuse/encoder/encoder.hpp"
#include "efuse/trainer/trainer.hpp"

namespace efuse::cli {

/// Raised for malformed config files; the message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::size_t corpus_size = 5000;
  std::size_t image_size = 32;
  std::size_t eval_images = 1000;
  std::size_t grounding_images = 20;
  std::size_t grounding_size = 256;
  std::size_t manifest_images = 200;
};

struct TokenizerConfig {
  std::size_t codebook_size = 64;
  std::size_t codebook_images = 300;
};

struct EvalConfig {
  std::vector<std::string> tasks = {"crop", "rotate", "flip", "jitter", "colorize"};
  std::size_t per_kind = 200;
  std::size_t gap_pairs = 200;
  /// Annotation manifest for grounding tasks; empty means synthetic scenes.
  std::string annotations;
  std::string images_root;
};

/// Every knob of a run. Loaded from a JSON file with sections "data",
/// "tokenizer", "model", "train" and "eval" plus a top-level "seed".
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  TokenizerConfig tokenizer;
  enc::ModelConfig model;
  train::TrainConfig train;
  EvalConfig eval;

  RunConfig();
  void validate() const;
  nlohmann::ordered_json to_json() const;
};

/// Overlays the keys present in `j` onto `cfg`. Unknown keys and wrong types
/// raise ConfigError naming the dotted key.
void apply_json(RunConfig& cfg, const nlohmann::ordered_json& j);
RunConfig load_config(const std::string& path);

/// Dotted names of every accepted key, in documentation order.
std::vector<std::string> config_keys();

}  // namespace efuse::cli
