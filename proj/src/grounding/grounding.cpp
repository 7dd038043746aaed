#include "efuse/grounding/grounding.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "efuse/tgit/tgit.hpp"

namespace efuse::ground {

namespace {

using Json = nlohmann::ordered_json;

bool has_description(const Box& b) { return b.description.has_value() && !b.description->empty(); }

void shuffle_pool(RegionTask& t, Rng& rng) {
  const Region gt = t.candidates[t.ground_truth];
  std::shuffle(t.candidates.begin(), t.candidates.end(), rng);
  t.ground_truth = static_cast<std::size_t>(std::find(t.candidates.begin(), t.candidates.end(), gt) - t.candidates.begin());
}

// label -> number of boxes with that label among `keep`
std::map<std::string, std::size_t> label_counts(const AnnotatedImage& ai, const std::vector<std::size_t>& keep) {
  std::map<std::string, std::size_t> n;
  for (std::size_t k : keep) ++n[ai.boxes[k].label];
  return n;
}

}  // namespace

void AnnotatedImage::validate() const {
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box& b = boxes[i];
    if (b.x0 < 0 || b.y0 < 0 || b.x1 <= b.x0 || b.y1 <= b.y0 || static_cast<std::size_t>(b.x1) > width ||
        static_cast<std::size_t>(b.y1) > height) {
      throw std::invalid_argument("image '" + image + "': box " + std::to_string(i) + " (" + std::to_string(b.x0) +
                                  "," + std::to_string(b.y0) + "," + std::to_string(b.x1) + "," + std::to_string(b.y1) +
                                  ") is empty or outside " + std::to_string(width) + "x" + std::to_string(height));
    }
  }
}

double iou(const Box& a, const Box& b) {
  const long iw = std::max(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const long ih = std::max(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const long inter = iw * ih;
  const long uni = static_cast<long>(a.width()) * a.height() + static_cast<long>(b.width()) * b.height() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

std::vector<std::size_t> prune_overlapping(const std::vector<Box>& boxes, const std::vector<std::size_t>& order,
                                           double threshold) {
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    const bool clash = std::any_of(kept.begin(), kept.end(),
                                   [&](std::size_t k) { return iou(boxes[i], boxes[k]) > threshold; });
    if (!clash) kept.push_back(i);
  }
  return kept;
}

std::optional<RegionTask> build_vg_crop_task(const AnnotatedImage& ai, std::size_t image_index, Rng& rng) {
  ai.validate();
  std::vector<std::size_t> described;
  for (std::size_t i = 0; i < ai.boxes.size(); ++i) {
    if (has_description(ai.boxes[i])) described.push_back(i);
  }
  const auto kept = prune_overlapping(ai.boxes, described, kVgCropMaxIou);
  if (kept.size() < 2) return std::nullopt;
  RegionTask t;
  t.task = "vg_crop";
  t.image = image_index;
  for (std::size_t k : kept) t.candidates.push_back({image_index, ai.boxes[k]});
  t.ground_truth = std::uniform_int_distribution<std::size_t>(0, kept.size() - 1)(rng);
  t.query_text = *ai.boxes[kept[t.ground_truth]].description;
  return t;
}

std::vector<std::vector<std::size_t>> oi_crop_survivors(const std::vector<AnnotatedImage>& manifest,
                                                        const OiCropConfig& cfg) {
  std::vector<std::vector<std::size_t>> keep(manifest.size());
  // per-box filters: side, relative size, aspect ratio
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& ai = manifest[i];
    ai.validate();
    for (std::size_t k = 0; k < ai.boxes.size(); ++k) {
      const Box& b = ai.boxes[k];
      const int w = b.width(), h = b.height();
      if (w < cfg.min_side || h < cfg.min_side) continue;
      if (w > cfg.max_relative_size * static_cast<double>(ai.width) ||
          h > cfg.max_relative_size * static_cast<double>(ai.height)) {
        continue;
      }
      if (static_cast<double>(std::max(w, h)) > cfg.max_aspect * static_cast<double>(std::min(w, h))) continue;
      keep[i].push_back(k);
    }
  }
  // labels that are rare over the whole manifest
  std::map<std::string, std::size_t> global;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    for (std::size_t k : keep[i]) ++global[manifest[i].boxes[k].label];
  }
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    std::erase_if(keep[i], [&](std::size_t k) { return global[manifest[i].boxes[k].label] < cfg.min_label_count; });
  }
  // images with too few uniquely labelled boxes, then overlap pruning
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto counts = label_counts(manifest[i], keep[i]);
    std::size_t unique = 0;
    for (const auto& [label, n] : counts) unique += n == 1 ? 1 : 0;
    if (unique < cfg.min_unique_boxes) {
      keep[i].clear();
      continue;
    }
    keep[i] = prune_overlapping(manifest[i].boxes, keep[i], cfg.max_iou);
  }
  return keep;
}

std::vector<RegionTask> build_oi_crop_tasks(const std::vector<AnnotatedImage>& manifest, std::uint64_t seed,
                                            const OiCropConfig& cfg) {
  const auto keep = oi_crop_survivors(manifest, cfg);
  const std::size_t n = manifest.size();
  std::map<std::string, std::size_t> used;
  std::vector<RegionTask> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ai = manifest[i];
    const auto counts = label_counts(ai, keep[i]);
    std::vector<std::size_t> queries;
    for (std::size_t k : keep[i]) {
      if (counts.at(ai.boxes[k].label) == 1) queries.push_back(k);
    }
    std::stable_sort(queries.begin(), queries.end(),
                     [&](std::size_t a, std::size_t b) { return ai.boxes[a].label < ai.boxes[b].label; });
    for (std::size_t q : queries) {
      const std::string& label = ai.boxes[q].label;
      if (used[label] >= cfg.max_queries_per_label) continue;
      RegionTask t;
      t.task = "oi_crop";
      t.image = i;
      t.query_text = label;
      t.candidates.push_back({i, ai.boxes[q]});
      for (std::size_t k : keep[i]) {
        if (t.candidates.size() == 1 + cfg.same_image_negatives) break;
        if (ai.boxes[k].label != label) t.candidates.push_back({i, ai.boxes[k]});
      }
      if (t.candidates.size() < 1 + cfg.same_image_negatives) continue;
      std::size_t others = 0;
      for (std::size_t step = 1; step < n && others < cfg.other_image_negatives; ++step) {
        const std::size_t j = (i + step) % n;
        for (std::size_t k : keep[j]) {
          if (manifest[j].boxes[k].label == label) {
            t.candidates.push_back({j, manifest[j].boxes[k]});
            ++others;
            break;
          }
        }
      }
      if (others < cfg.other_image_negatives) continue;
      t.ground_truth = 0;
      ++used[label];
      out.push_back(std::move(t));
    }
  }
  Rng rng(seed);
  for (auto& t : out) shuffle_pool(t, rng);
  return out;
}

std::vector<Box> oi_pos_decoys(const AnnotatedImage& ai, const Box& a, const Box& b, int min_side) {
  const int W = static_cast<int>(ai.width), H = static_cast<int>(ai.height);
  const int left = std::min(a.x0, b.x0), right = std::max(a.x1, b.x1);
  const int top = std::min(a.y0, b.y0), bottom = std::max(a.y1, b.y1);
  auto fits = [&](const Box& d) { return d.width() >= min_side && d.height() >= min_side; };
  std::vector<Box> out;
  Box l{0, 0, left, H, "left border", std::nullopt};
  if (!fits(l)) l = Box{0, 0, W, top, "top border", std::nullopt};
  if (fits(l)) out.push_back(l);
  Box r{right, 0, W, H, "right border", std::nullopt};
  if (!fits(r)) r = Box{0, bottom, W, H, "bottom border", std::nullopt};
  if (fits(r)) out.push_back(r);
  return out;
}

std::vector<RegionTask> build_oi_pos_tasks(const std::vector<AnnotatedImage>& manifest, std::uint64_t seed,
                                           const OiPosConfig& cfg) {
  std::map<std::string, std::size_t> used;
  std::vector<RegionTask> out;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& ai = manifest[i];
    ai.validate();
    std::map<std::string, std::vector<std::size_t>> by_label;
    for (std::size_t k = 0; k < ai.boxes.size(); ++k) by_label[ai.boxes[k].label].push_back(k);
    for (const auto& [label, idx] : by_label) {
      if (idx.size() != 2) continue;
      Box a = ai.boxes[idx[0]], b = ai.boxes[idx[1]];
      auto covers = [](const Box& box, double x) { return box.x0 <= x && x <= box.x1; };
      if (covers(b, a.center_x()) || covers(a, b.center_x())) continue;
      if (b.center_x() < a.center_x()) std::swap(a, b);
      const auto decoys = oi_pos_decoys(ai, a, b, cfg.min_decoy_side);
      for (int side = 0; side < 2; ++side) {
        if (used[label] >= cfg.max_tasks_per_label) break;
        RegionTask t;
        t.task = "oi_pos";
        t.image = i;
        t.query_text = "The " + label + " on the " + (side == 0 ? "left" : "right");
        t.candidates = {{i, a}, {i, b}};
        for (const Box& d : decoys) t.candidates.push_back({i, d});
        t.ground_truth = static_cast<std::size_t>(side);
        ++used[label];
        out.push_back(std::move(t));
      }
    }
  }
  Rng rng(seed);
  for (auto& t : out) shuffle_pool(t, rng);
  return out;
}

ImageLoader fimg_loader(std::string root) {
  return [root = std::move(root)](const AnnotatedImage& ai) {
    Image img = load_fimg(root.empty() ? ai.image : root + "/" + ai.image);
    if (img.width != ai.width || img.height != ai.height) {
      throw std::runtime_error("image '" + ai.image + "' is " + std::to_string(img.width) + "x" +
                               std::to_string(img.height) + ", manifest says " + std::to_string(ai.width) + "x" +
                               std::to_string(ai.height));
    }
    return img;
  };
}

RetrievalTask materialize(const RegionTask& task, const std::vector<AnnotatedImage>& manifest,
                          const ImageLoader& load, std::size_t size) {
  return materialize(std::vector<RegionTask>{task}, manifest, load, size).front();
}

std::vector<RetrievalTask> materialize(const std::vector<RegionTask>& tasks,
                                       const std::vector<AnnotatedImage>& manifest, const ImageLoader& load,
                                       std::size_t size) {
  std::map<std::size_t, Image> cache;
  auto image = [&](std::size_t i) -> const Image& {
    if (i >= manifest.size()) throw std::out_of_range("region refers to image " + std::to_string(i));
    auto it = cache.find(i);
    if (it == cache.end()) it = cache.emplace(i, load(manifest[i])).first;
    return it->second;
  };
  std::vector<RetrievalTask> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) {
    RetrievalTask r;
    r.task = t.task;
    r.query = MultimodalInput::of(tgit::resize_nearest(image(t.image), size, size), t.query_text);
    for (const auto& c : t.candidates) {
      const Image crop = tgit::crop_region(image(c.image), c.box.x0, c.box.y0, c.box.x1, c.box.y1);
      r.candidates.push_back(MultimodalInput::of_image(tgit::resize_nearest(crop, size, size)));
    }
    r.ground_truth = t.ground_truth;
    out.push_back(std::move(r));
  }
  return out;
}

void write_annotations(const std::string& path, const std::vector<AnnotatedImage>& manifest) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write annotations " + path);
  for (const auto& ai : manifest) {
    Json j;
    j["image"] = ai.image;
    j["width"] = ai.width;
    j["height"] = ai.height;
    j["boxes"] = Json::array();
    for (const auto& b : ai.boxes) {
      Json jb;
      jb["x0"] = b.x0;
      jb["y0"] = b.y0;
      jb["x1"] = b.x1;
      jb["y1"] = b.y1;
      jb["label"] = b.label;
      if (b.description) jb["description"] = *b.description;
      j["boxes"].push_back(std::move(jb));
    }
    os << j.dump() << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

std::vector<AnnotatedImage> read_annotations(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open annotations " + path);
  std::vector<AnnotatedImage> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json j = Json::parse(line);
      AnnotatedImage ai;
      ai.image = j.at("image").get<std::string>();
      ai.width = j.at("width").get<std::size_t>();
      ai.height = j.at("height").get<std::size_t>();
      for (const auto& jb : j.at("boxes")) {
        Box b;
        b.x0 = jb.at("x0").get<int>();
        b.y0 = jb.at("y0").get<int>();
        b.x1 = jb.at("x1").get<int>();
        b.y1 = jb.at("y1").get<int>();
        b.label = jb.at("label").get<std::string>();
        if (jb.contains("description")) b.description = jb.at("description").get<std::string>();
        ai.boxes.push_back(std::move(b));
      }
      ai.validate();
      out.push_back(std::move(ai));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

namespace {

std::size_t palette_index(const std::string& name) {
  const auto& p = tgit::palette();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (name == p[i].name) return i;
  }
  throw std::logic_error("no palette color " + name);
}

bool inside_stretched(tgit::ShapeType type, double x, double y, const Box& b) {
  const double u = (x - b.x0) / b.width(), v = (y - b.y0) / b.height();  // both in [0, 1]
  switch (type) {
    case tgit::ShapeType::Square:
      return true;
    case tgit::ShapeType::Circle:
      return (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.25;
    case tgit::ShapeType::Triangle:
      // apex at the top centre, base along the bottom edge
      return std::abs(u - 0.5) <= 0.5 * v;
  }
  return false;
}

}  // namespace

SyntheticGrounding synthetic_grounding(std::size_t n_images, std::uint64_t seed, std::size_t size) {
  if (size < 64) throw std::invalid_argument("synthetic_grounding: size must be at least 64");
  const std::vector<std::size_t> colors = {palette_index("red"), palette_index("green"), palette_index("blue"),
                                           palette_index("yellow")};
  const std::vector<std::size_t> backgrounds = {palette_index("gray"), palette_index("black"), palette_index("white")};
  const tgit::ShapeType shapes[] = {tgit::ShapeType::Circle, tgit::ShapeType::Square, tgit::ShapeType::Triangle};
  const int side = static_cast<int>(size);
  Rng rng(seed);
  auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto coin = [&](double p) { return std::bernoulli_distribution(p)(rng); };

  SyntheticGrounding out;
  for (std::size_t n = 0; n < n_images; ++n) {
    const auto& bg = tgit::palette()[backgrounds[static_cast<std::size_t>(uniform(0, 2))]];
    Image img(size, size);
    for (std::size_t p = 0; p < size * size; ++p) {
      img.pixels[p * 3] = bg.r;
      img.pixels[p * 3 + 1] = bg.g;
      img.pixels[p * 3 + 2] = bg.b;
    }
    AnnotatedImage ai;
    char name[32];
    std::snprintf(name, sizeof name, "img_%04zu.fimg", n);
    ai.image = name;
    ai.width = ai.height = size;
    // labels are drawn without replacement, plus occasional repeats
    std::vector<std::pair<std::size_t, tgit::ShapeType>> fresh, kinds;
    for (std::size_t c : colors) {
      for (auto s : shapes) fresh.emplace_back(c, s);
    }
    std::shuffle(fresh.begin(), fresh.end(), rng);
    const int objects = uniform(7, 10);
    for (int o = 0; o < objects; ++o) {
      std::pair<std::size_t, tgit::ShapeType> kind;
      if (fresh.empty() || (!kinds.empty() && coin(0.15))) {
        kind = kinds[static_cast<std::size_t>(uniform(0, static_cast<int>(kinds.size()) - 1))];
      } else {
        kind = fresh.back();
        fresh.pop_back();
      }
      kinds.push_back(kind);
      // mostly mid-sized boxes; some too small, too large or too elongated
      int w, h;
      const double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      if (r < 0.1) {
        w = uniform(side / 12, side / 5);
      } else if (r < 0.15) {
        w = uniform(side * 3 / 4, side - 2);
      } else {
        w = uniform(side / 5, side * 11 / 20);
      }
      const double aspect = coin(0.1) ? std::uniform_real_distribution<double>(1.6, 3.0)(rng)
                                      : std::uniform_real_distribution<double>(1.0, 1.4)(rng);
      h = static_cast<int>(w * aspect);
      if (coin(0.5)) std::swap(w, h);
      w = std::clamp(w, 8, side);
      h = std::clamp(h, 8, side);
      Box b;
      b.x0 = uniform(0, side - w);
      b.y0 = uniform(0, side - h);
      b.x1 = b.x0 + w;
      b.y1 = b.y0 + h;
      b.label = std::string(tgit::palette()[kind.first].name) + " " + std::string(tgit::shape_name(kind.second));
      b.description = "the " + b.label;
      const auto& col = tgit::palette()[kind.first];
      for (int y = b.y0; y < b.y1; ++y) {
        for (int x = b.x0; x < b.x1; ++x) {
          if (!inside_stretched(kind.second, x + 0.5, y + 0.5, b)) continue;
          const auto p = (static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)) * 3;
          img.pixels[p] = col.r;
          img.pixels[p + 1] = col.g;
          img.pixels[p + 2] = col.b;
        }
      }
      ai.boxes.push_back(std::move(b));
    }
    out.manifest.push_back(std::move(ai));
    out.images.push_back(std::move(img));
  }
  return out;
}

}  // namespace efuse::ground
