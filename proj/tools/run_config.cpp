#include "run_config.hpp"

#include <fstream>
#include <functional>
#include <set>

namespace efuse::cli {

namespace {

using Json = nlohmann::ordered_json;

struct Field {
  std::string key;
  std::function<void(RunConfig&, const Json&)> set;
  std::function<Json(const RunConfig&)> get;
};

template <class T, class Access>
Field field(std::string key, Access access) {
  return {std::move(key), [access](RunConfig& c, const Json& j) { access(c) = j.get<T>(); },
          [access](const RunConfig& c) { return Json(access(const_cast<RunConfig&>(c))); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back(field<std::uint64_t>("seed", [](RunConfig& c) -> auto& { return c.seed; }));

    v.push_back(field<std::size_t>("data.corpus_size", [](RunConfig& c) -> auto& { return c.data.corpus_size; }));
    v.push_back(field<std::size_t>("data.image_size", [](RunConfig& c) -> auto& { return c.data.image_size; }));
    v.push_back(field<std::size_t>("data.eval_images", [](RunConfig& c) -> auto& { return c.data.eval_images; }));
    v.push_back(field<std::size_t>("data.grounding_images", [](RunConfig& c) -> auto& { return c.data.grounding_images; }));
    v.push_back(field<std::size_t>("data.grounding_size", [](RunConfig& c) -> auto& { return c.data.grounding_size; }));
    v.push_back(field<std::size_t>("data.manifest_images", [](RunConfig& c) -> auto& { return c.data.manifest_images; }));

    v.push_back(field<std::size_t>("tokenizer.codebook_size", [](RunConfig& c) -> auto& { return c.tokenizer.codebook_size; }));
    v.push_back(field<std::size_t>("tokenizer.codebook_images", [](RunConfig& c) -> auto& { return c.tokenizer.codebook_images; }));

    v.push_back(field<std::size_t>("model.layers", [](RunConfig& c) -> auto& { return c.model.layers; }));
    v.push_back(field<std::size_t>("model.width", [](RunConfig& c) -> auto& { return c.model.width; }));
    v.push_back(field<std::size_t>("model.heads", [](RunConfig& c) -> auto& { return c.model.heads; }));
    v.push_back(field<std::size_t>("model.context", [](RunConfig& c) -> auto& { return c.model.context; }));
    v.push_back(field<std::size_t>("model.mlp_hidden", [](RunConfig& c) -> auto& { return c.model.mlp_hidden; }));
    v.push_back(field<std::size_t>("model.fusion_layers", [](RunConfig& c) -> auto& { return c.model.fusion_layers; }));

    v.push_back({"train.kind",
                 [](RunConfig& c, const Json& j) { c.train.kind = enc::parse_model_kind(j.get<std::string>()); },
                 [](const RunConfig& c) { return Json(std::string(enc::model_kind_name(c.train.kind))); }});
    v.push_back(field<std::int64_t>("train.steps", [](RunConfig& c) -> auto& { return c.train.steps; }));
    v.push_back(field<std::size_t>("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    v.push_back(field<double>("train.lr", [](RunConfig& c) -> auto& { return c.train.lr; }));
    v.push_back(field<std::int64_t>("train.warmup", [](RunConfig& c) -> auto& { return c.train.warmup; }));
    v.push_back(field<double>("train.weight_decay", [](RunConfig& c) -> auto& { return c.train.weight_decay; }));
    v.push_back(field<double>("train.clip", [](RunConfig& c) -> auto& { return c.train.clip; }));
    v.push_back(field<double>("train.alpha", [](RunConfig& c) -> auto& { return c.train.alpha; }));
    v.push_back(field<double>("train.mask_p", [](RunConfig& c) -> auto& { return c.train.mask_p; }));
    v.push_back(field<bool>("train.hard_negatives", [](RunConfig& c) -> auto& { return c.train.hard_negatives; }));
    v.push_back(field<bool>("train.mmm", [](RunConfig& c) -> auto& { return c.train.mmm; }));
    v.push_back(field<bool>("train.decay_temperature", [](RunConfig& c) -> auto& { return c.train.decay_temperature; }));
    v.push_back({"train.tasks",
                 [](RunConfig& c, const Json& j) {
                   if (!j.is_object()) throw ConfigError("config key 'train.tasks' must be an object of task weights");
                   c.train.task_weights.clear();
                   for (const auto& [name, w] : j.items()) c.train.task_weights.emplace_back(name, w.get<double>());
                 },
                 [](const RunConfig& c) {
                   Json o = Json::object();
                   for (const auto& [name, w] : c.train.task_weights) o[name] = w;
                   return o;
                 }});

    v.push_back(field<std::vector<std::string>>("eval.tasks", [](RunConfig& c) -> auto& { return c.eval.tasks; }));
    v.push_back(field<std::size_t>("eval.per_kind", [](RunConfig& c) -> auto& { return c.eval.per_kind; }));
    v.push_back(field<std::size_t>("eval.gap_pairs", [](RunConfig& c) -> auto& { return c.eval.gap_pairs; }));
    v.push_back(field<std::string>("eval.annotations", [](RunConfig& c) -> auto& { return c.eval.annotations; }));
    v.push_back(field<std::string>("eval.images_root", [](RunConfig& c) -> auto& { return c.eval.images_root; }));
    return v;
  }();
  return f;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

const std::set<std::string>& sections() {
  static const std::set<std::string> s = {"data", "tokenizer", "model", "train", "eval"};
  return s;
}

void set_key(RunConfig& cfg, const std::string& key, const Json& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  try {
    f->set(cfg, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("bad value for config key '" + key + "': " + e.what());
  }
}

}  // namespace

RunConfig::RunConfig() {
  train.task_weights = {{"crop", 1.0}, {"rotate", 1.0}, {"flip", 1.0}, {"jitter", 1.0}, {"colorize", 1.0}};
}

void RunConfig::validate() const {
  if (data.corpus_size == 0 || data.eval_images == 0) throw ConfigError("data sizes must be positive");
  if (data.image_size == 0 || data.image_size % 4 != 0) throw ConfigError("data.image_size must be a positive multiple of 4");
  if (tokenizer.codebook_size == 0) throw ConfigError("tokenizer.codebook_size must be positive");
  if (tokenizer.codebook_images == 0 || tokenizer.codebook_images > data.corpus_size) {
    throw ConfigError("tokenizer.codebook_images must be in [1, data.corpus_size]");
  }
  if (model.heads == 0 || model.width % model.heads != 0) throw ConfigError("model.width must be divisible by model.heads");
  if (eval.per_kind > data.eval_images) throw ConfigError("eval.per_kind exceeds data.eval_images");
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
}

Json RunConfig::to_json() const {
  Json out = Json::object();
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    if (dot == std::string::npos) {
      out[f.key] = f.get(*this);
    } else {
      out[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get(*this);
    }
  }
  return out;
}

void apply_json(RunConfig& cfg, const Json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (sections().count(key)) {
      if (!value.is_object()) throw ConfigError("config section '" + key + "' must be an object");
      for (const auto& [sub, v] : value.items()) set_key(cfg, key + "." + sub, v);
    } else {
      set_key(cfg, key, value);
    }
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  Json j;
  try {
    j = Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  RunConfig cfg;
  apply_json(cfg, j);
  return cfg;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

}  // namespace efuse::cli
