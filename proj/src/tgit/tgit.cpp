#include "efuse/tgit/tgit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace efuse::tgit {

namespace {

constexpr const char* kRowNames[] = {"upper", "center", "lower"};
constexpr const char* kColNames[] = {"left", "center", "right"};

double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

std::string tenths_str(int t) { return std::to_string(t / 10) + "." + std::to_string(t % 10); }

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

bool inside_shape(ShapeType type, double px, double py, double cx, double cy, double r) {
  switch (type) {
    case ShapeType::Circle:
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
    case ShapeType::Square:
      return std::abs(px - cx) <= r && std::abs(py - cy) <= r;
    case ShapeType::Triangle: {
      // apex up, base at cy + r
      if (py < cy - r || py > cy + r) return false;
      const double half = 0.5 * (py - (cy - r));
      return std::abs(px - cx) <= half;
    }
  }
  return false;
}

Image flip_image(const Image& img, bool horizontal) {
  Image out(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t sy = horizontal ? y : img.height - 1 - y;
      const std::size_t sx = horizontal ? img.width - 1 - x : x;
      for (std::size_t c = 0; c < Image::kChannels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

Image rotate_image(const Image& img, int angle, bool clockwise) {
  // y points down, so a positive angle in these formulas turns clockwise on screen.
  const double theta = (clockwise ? 1.0 : -1.0) * angle * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cx = 0.5 * static_cast<double>(img.width), cy = 0.5 * static_cast<double>(img.height);
  Image out(img.height, img.width, 0.0);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      // inverse rotation: where did this output pixel come from
      const double sx = cx + cs * dx + sn * dy;
      const double sy = cy - sn * dx + cs * dy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      if (fx < 0 || fy < 0 || fx >= static_cast<double>(img.width) || fy >= static_cast<double>(img.height)) continue;
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        out.at(y, x, c) = img.at(static_cast<std::size_t>(fy), static_cast<std::size_t>(fx), c);
      }
    }
  }
  return out;
}

Image crop_cell(const Image& img, int cell) {
  const std::size_t h = (img.height + 1) / 2, w = (img.width + 1) / 2;
  const std::size_t row = static_cast<std::size_t>(cell / 3), col = static_cast<std::size_t>(cell % 3);
  const std::size_t ys[] = {0, (img.height - h) / 2, img.height - h};
  const std::size_t xs[] = {0, (img.width - w) / 2, img.width - w};
  const Image window = crop_region(img, static_cast<int>(xs[col]), static_cast<int>(ys[row]),
                                   static_cast<int>(xs[col] + w), static_cast<int>(ys[row] + h));
  return resize_nearest(window, img.height, img.width);
}

}  // namespace

const std::vector<NamedColor>& palette() {
  static const std::vector<NamedColor> colors = {
      {"red", 0.90, 0.10, 0.10},    {"green", 0.10, 0.70, 0.20},  {"blue", 0.15, 0.25, 0.90},
      {"yellow", 0.95, 0.90, 0.10}, {"cyan", 0.10, 0.85, 0.90},   {"magenta", 0.85, 0.15, 0.80},
      {"orange", 1.00, 0.55, 0.05}, {"purple", 0.50, 0.15, 0.65}, {"white", 0.97, 0.97, 0.97},
      {"black", 0.05, 0.05, 0.05},  {"gray", 0.50, 0.50, 0.50},   {"brown", 0.55, 0.33, 0.12},
  };
  return colors;
}

std::string_view shape_name(ShapeType t) {
  switch (t) {
    case ShapeType::Circle:
      return "circle";
    case ShapeType::Square:
      return "square";
    case ShapeType::Triangle:
      return "triangle";
  }
  return "";
}

ShapesScene generate_shapes_scene(std::uint64_t seed, std::size_t size, const SceneOptions& opts) {
  if (size < 4) throw std::invalid_argument("generate_shapes_scene: size too small");
  std::vector<std::size_t> colors = opts.colors;
  if (colors.empty()) {
    for (std::size_t i = 0; i < palette().size(); ++i) colors.push_back(i);
  }
  if (colors.size() < 2) throw std::invalid_argument("generate_shapes_scene: need at least two colors");
  Rng rng(seed);
  const double side = static_cast<double>(size);
  for (int attempt = 0;; ++attempt) {
    ShapesScene scene;
    scene.background = colors[std::uniform_int_distribution<std::size_t>(0, colors.size() - 1)(rng)];
    const NamedColor& bg = palette()[scene.background];
    scene.image = Image(size, size);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        scene.image.at(y, x, 0) = bg.r;
        scene.image.at(y, x, 1) = bg.g;
        scene.image.at(y, x, 2) = bg.b;
      }
    }
    const int n = uniform_int(rng, opts.min_objects, opts.max_objects);
    // The first shape sits strictly inside a random quadrant so neither flip
    // is a symmetry of the composition.
    const int quadrant = uniform_int(rng, 0, 3);
    for (int i = 0; i < n; ++i) {
      ShapeObject obj;
      obj.type = static_cast<ShapeType>(uniform_int(rng, 0, 2));
      do {
        obj.color = colors[std::uniform_int_distribution<std::size_t>(0, colors.size() - 1)(rng)];
      } while (obj.color == scene.background);
      const double r = std::uniform_real_distribution<double>(opts.min_radius, opts.max_radius)(rng) * side;
      double cx, cy;
      if (i == 0) {
        const double lo = r + 1.0, hi = std::max(lo, 0.5 * side - r - 1.0);
        cx = std::uniform_real_distribution<double>(lo, hi)(rng);
        cy = std::uniform_real_distribution<double>(lo, hi)(rng);
        if (quadrant & 1) cx = side - cx;
        if (quadrant & 2) cy = side - cy;
      } else {
        cx = std::uniform_real_distribution<double>(r, side - r)(rng);
        cy = std::uniform_real_distribution<double>(r, side - r)(rng);
      }
      int x0 = static_cast<int>(size), y0 = static_cast<int>(size), x1 = 0, y1 = 0;
      const NamedColor& col = palette()[obj.color];
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          if (!inside_shape(obj.type, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, cx, cy, r)) continue;
          scene.image.at(y, x, 0) = col.r;
          scene.image.at(y, x, 1) = col.g;
          scene.image.at(y, x, 2) = col.b;
          x0 = std::min(x0, static_cast<int>(x));
          y0 = std::min(y0, static_cast<int>(y));
          x1 = std::max(x1, static_cast<int>(x) + 1);
          y1 = std::max(y1, static_cast<int>(y) + 1);
        }
      }
      if (x1 <= x0 || y1 <= y0) continue;
      obj.x0 = x0;
      obj.y0 = y0;
      obj.x1 = x1;
      obj.y1 = y1;
      scene.objects.push_back(obj);
    }
    if (flip_image(scene.image, true) != scene.image && flip_image(scene.image, false) != scene.image) return scene;
    if (attempt > 100) throw std::runtime_error("generate_shapes_scene: could not produce an asymmetric scene");
  }
}

Image generate_shapes_image(std::uint64_t seed, std::size_t size) { return generate_shapes_scene(seed, size).image; }

Image resize_nearest(const Image& img, std::size_t height, std::size_t width) {
  if (img.height == 0 || img.width == 0) throw std::invalid_argument("resize_nearest: empty image");
  Image out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = y * img.height / height;
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = x * img.width / width;
      for (std::size_t c = 0; c < Image::kChannels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

Image crop_region(const Image& img, int x0, int y0, int x1, int y1) {
  if (x0 < 0 || y0 < 0 || x1 <= x0 || y1 <= y0 || static_cast<std::size_t>(x1) > img.width ||
      static_cast<std::size_t>(y1) > img.height) {
    throw std::invalid_argument("crop_region: box outside image");
  }
  Image out(static_cast<std::size_t>(y1 - y0), static_cast<std::size_t>(x1 - x0));
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        out.at(y, x, c) = img.at(y + static_cast<std::size_t>(y0), x + static_cast<std::size_t>(x0), c);
      }
    }
  }
  return out;
}

std::string_view kind_name(TransformKind k) {
  switch (k) {
    case TransformKind::Crop:
      return "crop";
    case TransformKind::Rotate:
      return "rotate";
    case TransformKind::Flip:
      return "flip";
    case TransformKind::Jitter:
      return "jitter";
    case TransformKind::Colorize:
      return "colorize";
    case TransformKind::Grayscale:
      return "grayscale";
  }
  return "";
}

TransformKind parse_kind(std::string_view name) {
  for (auto k : {TransformKind::Crop, TransformKind::Rotate, TransformKind::Flip, TransformKind::Jitter,
                 TransformKind::Colorize, TransformKind::Grayscale}) {
    if (kind_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown transformation kind '" + std::string(name) + "'");
}

TransformSpec TransformSpec::crop(int cell) {
  TransformSpec s;
  s.kind = TransformKind::Crop;
  s.crop_cell = cell;
  s.validate();
  return s;
}

TransformSpec TransformSpec::rotate(int angle, bool clockwise) {
  TransformSpec s;
  s.kind = TransformKind::Rotate;
  s.angle = angle;
  s.clockwise = clockwise;
  s.validate();
  return s;
}

TransformSpec TransformSpec::flip(bool horizontal) {
  TransformSpec s;
  s.kind = TransformKind::Flip;
  s.horizontal = horizontal;
  return s;
}

TransformSpec TransformSpec::jitter(int brightness, int contrast, int saturation) {
  TransformSpec s;
  s.kind = TransformKind::Jitter;
  s.brightness = brightness;
  s.contrast = contrast;
  s.saturation = saturation;
  s.validate();
  return s;
}

TransformSpec TransformSpec::colorize() {
  TransformSpec s;
  s.kind = TransformKind::Colorize;
  return s;
}

TransformSpec TransformSpec::grayscale() {
  TransformSpec s;
  s.kind = TransformKind::Grayscale;
  return s;
}

void TransformSpec::validate() const {
  switch (kind) {
    case TransformKind::Crop:
      if (crop_cell < 0 || crop_cell > 8) throw std::invalid_argument("crop cell must be in 0..8");
      break;
    case TransformKind::Rotate:
      if (angle < 10 || angle > 90 || angle % 10 != 0) throw std::invalid_argument("rotation angle must be 10..90 step 10");
      break;
    case TransformKind::Jitter:
      for (int f : {brightness, contrast, saturation}) {
        if (f < 3 || f > 20) throw std::invalid_argument("jitter factor must be in 0.3..2.0");
      }
      break;
    default:
      break;
  }
}

std::vector<TransformSpec> all_specs(TransformKind kind) {
  std::vector<TransformSpec> out;
  switch (kind) {
    case TransformKind::Crop:
      for (int c = 0; c < 9; ++c) out.push_back(TransformSpec::crop(c));
      break;
    case TransformKind::Rotate:
      for (bool cw : {true, false}) {
        for (int a = 10; a <= 90; a += 10) out.push_back(TransformSpec::rotate(a, cw));
      }
      break;
    case TransformKind::Flip:
      out = {TransformSpec::flip(true), TransformSpec::flip(false)};
      break;
    case TransformKind::Colorize:
      out = {TransformSpec::colorize()};
      break;
    case TransformKind::Grayscale:
      out = {TransformSpec::grayscale()};
      break;
    case TransformKind::Jitter:
      throw std::invalid_argument("jitter specs are not enumerated");
  }
  return out;
}

TransformSpec random_spec(TransformKind kind, Rng& rng) {
  if (kind == TransformKind::Jitter) {
    // uniform on [0.3, 2.0] rounded to one decimal
    std::uniform_real_distribution<double> u(0.3, 2.0);
    auto draw = [&] { return std::clamp(static_cast<int>(std::lround(u(rng) * 10.0)), 3, 20); };
    const int b = draw(), c = draw(), s = draw();
    return TransformSpec::jitter(b, c, s);
  }
  const auto specs = all_specs(kind);
  return specs[std::uniform_int_distribution<std::size_t>(0, specs.size() - 1)(rng)];
}

Image grayscale(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    const double l = luminance(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]);
    out.pixels[i] = out.pixels[i + 1] = out.pixels[i + 2] = l;
  }
  return out;
}

Image adjust_brightness(const Image& img, double factor) {
  Image out = img;
  for (double& v : out.pixels) v = clip01(v * factor);
  return out;
}

Image adjust_contrast(const Image& img, double factor) {
  double mean = 0.0;
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    mean += luminance(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]);
  }
  mean /= static_cast<double>(img.height * img.width);
  Image out = img;
  for (double& v : out.pixels) v = clip01(mean + factor * (v - mean));
  return out;
}

Image adjust_saturation(const Image& img, double factor) {
  Image out = img;
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    const double l = luminance(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]);
    for (std::size_t c = 0; c < 3; ++c) out.pixels[i + c] = clip01(l + factor * (img.pixels[i + c] - l));
  }
  return out;
}

Image apply_transformation(const Image& img, const TransformSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case TransformKind::Crop:
      return crop_cell(img, spec.crop_cell);
    case TransformKind::Rotate:
      return rotate_image(img, spec.angle, spec.clockwise);
    case TransformKind::Flip:
      return flip_image(img, spec.horizontal);
    case TransformKind::Jitter:
      return adjust_saturation(adjust_contrast(adjust_brightness(img, spec.brightness / 10.0), spec.contrast / 10.0),
                               spec.saturation / 10.0);
    case TransformKind::Colorize:
      return img;
    case TransformKind::Grayscale:
      return grayscale(img);
  }
  return img;
}

std::string describe_transformation(const TransformSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case TransformKind::Crop:
      return std::string("Crop to ") + kRowNames[spec.crop_cell / 3] + " " + kColNames[spec.crop_cell % 3];
    case TransformKind::Rotate:
      return "Rotate " + std::to_string(spec.angle) + "° " + (spec.clockwise ? "clockwise" : "counter-clockwise");
    case TransformKind::Flip:
      return spec.horizontal ? "Horizontal flip" : "Vertical flip";
    case TransformKind::Colorize:
      return "Colorize";
    case TransformKind::Grayscale:
      return "Convert to grayscale";
    case TransformKind::Jitter: {
      auto part = [](int f, const char* what) {
        return std::string(f >= 10 ? "increase " : "decrease ") + what + " by factor " + tenths_str(f);
      };
      return part(spec.brightness, "brightness") + ", " + part(spec.contrast, "contrast") + ", " +
             part(spec.saturation, "saturation");
    }
  }
  return {};
}

TgitSample make_sample(const Image& img, const TransformSpec& spec) {
  if (spec.kind == TransformKind::Colorize) return {grayscale(img), describe_transformation(spec), img};
  return {img, describe_transformation(spec), apply_transformation(img, spec)};
}

TrainingPair to_pair(const TgitSample& s, std::size_t group, std::string task) {
  return {MultimodalInput::of(s.query_image, s.query_text), MultimodalInput::of_image(s.target_image), group,
          std::move(task)};
}

const std::vector<TransformKind>& eval_kinds() {
  static const std::vector<TransformKind> kinds = {TransformKind::Crop, TransformKind::Rotate, TransformKind::Flip,
                                                   TransformKind::Jitter, TransformKind::Colorize};
  return kinds;
}

RetrievalTask build_tgit_pool(const Image& img, TransformKind kind, Rng& rng) {
  RetrievalTask task;
  task.task = std::string(kind_name(kind));
  std::vector<Image> pool;
  std::size_t gt = 0;
  switch (kind) {
    case TransformKind::Crop:
    case TransformKind::Rotate: {
      const auto specs = all_specs(kind);
      gt = std::uniform_int_distribution<std::size_t>(0, specs.size() - 1)(rng);
      const TgitSample s = make_sample(img, specs[gt]);
      task.query = MultimodalInput::of(s.query_image, s.query_text);
      for (const auto& sp : specs) pool.push_back(apply_transformation(img, sp));
      break;
    }
    case TransformKind::Flip: {
      const bool horizontal = std::bernoulli_distribution(0.5)(rng);
      const TgitSample s = make_sample(img, TransformSpec::flip(horizontal));
      task.query = MultimodalInput::of(s.query_image, s.query_text);
      pool = {img, apply_transformation(img, TransformSpec::flip(true)),
              apply_transformation(img, TransformSpec::flip(false))};
      gt = horizontal ? 1 : 2;
      break;
    }
    case TransformKind::Jitter: {
      std::vector<TransformSpec> specs{random_spec(kind, rng)};
      while (specs.size() < 10) {
        TransformSpec s = random_spec(kind, rng);
        if (std::find(specs.begin(), specs.end(), s) == specs.end()) specs.push_back(s);
      }
      const TgitSample s = make_sample(img, specs[0]);
      task.query = MultimodalInput::of(s.query_image, s.query_text);
      for (const auto& sp : specs) pool.push_back(apply_transformation(img, sp));
      gt = 0;
      break;
    }
    case TransformKind::Colorize:
    case TransformKind::Grayscale: {
      const TgitSample s = make_sample(img, kind == TransformKind::Colorize ? TransformSpec::colorize()
                                                                            : TransformSpec::grayscale());
      task.query = MultimodalInput::of(s.query_image, s.query_text);
      pool = {s.target_image, s.query_image};
      gt = 0;
      break;
    }
  }
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); ++i) {
    task.candidates.push_back(MultimodalInput::of_image(pool[order[i]]));
    if (order[i] == gt) task.ground_truth = i;
  }
  return task;
}

std::vector<TgitSample> hard_negative_group(const Image& img, TransformKind kind, Rng& rng) {
  std::vector<TgitSample> group;
  switch (kind) {
    case TransformKind::Crop:
      for (const auto& s : all_specs(kind)) group.push_back(make_sample(img, s));
      break;
    case TransformKind::Rotate: {
      auto specs = all_specs(kind);
      std::shuffle(specs.begin(), specs.end(), rng);
      for (std::size_t i = 0; i < 4; ++i) group.push_back(make_sample(img, specs[i]));
      break;
    }
    case TransformKind::Jitter: {
      std::vector<TransformSpec> specs;
      while (specs.size() < 4) {
        TransformSpec s = random_spec(kind, rng);
        if (std::find(specs.begin(), specs.end(), s) == specs.end()) specs.push_back(s);
      }
      for (const auto& s : specs) group.push_back(make_sample(img, s));
      break;
    }
    case TransformKind::Flip: {
      const auto h = TransformSpec::flip(true), v = TransformSpec::flip(false);
      const Image hi = apply_transformation(img, h), vi = apply_transformation(img, v);
      group.push_back(make_sample(img, h));
      group.push_back(make_sample(img, v));
      group.push_back({hi, describe_transformation(h), img});
      group.push_back({vi, describe_transformation(v), img});
      break;
    }
    case TransformKind::Colorize:
    case TransformKind::Grayscale:
      group.push_back(make_sample(img, TransformSpec::colorize()));
      group.push_back(make_sample(img, TransformSpec::grayscale()));
      break;
  }
  return group;
}

std::vector<std::string> template_corpus() {
  std::vector<std::string> out;
  for (auto k : {TransformKind::Crop, TransformKind::Rotate, TransformKind::Flip, TransformKind::Colorize,
                 TransformKind::Grayscale}) {
    for (const auto& s : all_specs(k)) out.push_back(describe_transformation(s));
  }
  for (int f = 3; f <= 20; ++f) out.push_back(describe_transformation(TransformSpec::jitter(f, f, f)));
  out.push_back("decrease brightness by factor 0.5, increase contrast by factor 1.5");
  std::vector<std::string> labels;
  for (const auto& c : palette()) {
    for (auto t : {ShapeType::Circle, ShapeType::Square, ShapeType::Triangle}) {
      labels.push_back(std::string(c.name) + " " + std::string(shape_name(t)));
    }
  }
  for (const auto& l : labels) {
    out.push_back("The " + l + " on the left");
    out.push_back("The " + l + " on the right");
    out.push_back("a photo of a " + l);
    out.push_back("an image of a " + l);
    out.push_back("a drawing of a " + l);
    out.push_back("a " + l + " and a " + l + " on a background");
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest " + path);
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["task"] = r.task;
    j["query_image"] = r.query_image;
    j["query_text"] = r.query_text;
    j["target_image"] = r.target_image;
    if (r.target_text) j["target_text"] = *r.target_text;
    j["group"] = r.group;
    os << j.dump() << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path);
  std::vector<ManifestRecord> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.task = j.at("task").get<std::string>();
      r.query_image = j.value("query_image", std::string{});
      r.query_text = j.value("query_text", std::string{});
      r.target_image = j.value("target_image", std::string{});
      if (j.contains("target_text")) r.target_text = j.at("target_text").get<std::string>();
      r.group = j.at("group").get<std::size_t>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

TrainingPair load_record(const ManifestRecord& rec, const std::string& root) {
  auto resolve = [&](const std::string& p) { return (std::filesystem::path(root) / p).string(); };
  TrainingPair pair;
  if (!rec.query_image.empty()) pair.first.image = load_fimg(resolve(rec.query_image));
  if (!rec.query_text.empty()) pair.first.text = rec.query_text;
  if (!rec.target_image.empty()) pair.second.image = load_fimg(resolve(rec.target_image));
  if (rec.target_text) pair.second.text = *rec.target_text;
  if (!pair.first.valid() || !pair.second.valid()) throw std::runtime_error("manifest record with an empty side");
  pair.group = rec.group;
  pair.task = rec.task;
  return pair;
}

}  // namespace efuse::tgit
