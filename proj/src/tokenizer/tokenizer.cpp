#include "efuse/tokenizer/tokenizer.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>

#include "efuse/binary_io.hpp"

namespace efuse::tok {

namespace {

constexpr const char* kSpecialNames[] = {"<bot>", "<eot>", "<mask>", "<pad>"};

std::string image_token_name(std::size_t code) { return "<img_" + std::to_string(code) + ">"; }

}  // namespace

UnifiedVocab::UnifiedVocab(std::vector<std::string> words, std::size_t image_codebook_size)
    : image_size_(image_codebook_size) {
  text_.reserve(words.size() + 1);
  text_.emplace_back(kUnk);
  index_.emplace(kUnk, 0);
  for (auto& w : words) {
    if (w == kUnk) throw std::invalid_argument("vocab words must not contain <unk>");
    if (!index_.emplace(w, text_.size()).second) throw std::invalid_argument("duplicate vocab word '" + w + "'");
    text_.push_back(std::move(w));
  }
}

TokenId UnifiedVocab::image_token(std::size_t code) const {
  if (code >= image_size_) throw std::out_of_range("image code " + std::to_string(code) + " outside codebook");
  return text_.size() + code;
}

std::size_t UnifiedVocab::image_code(TokenId id) const {
  if (kind(id) != TokenKind::Image) throw std::out_of_range("token " + std::to_string(id) + " is not an image token");
  return id - text_.size();
}

TokenKind UnifiedVocab::kind(TokenId id) const {
  if (id < text_.size()) return TokenKind::Text;
  if (id < text_.size() + image_size_) return TokenKind::Image;
  if (id < size()) return TokenKind::Special;
  throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
}

TokenId UnifiedVocab::text_id(std::string_view word) const {
  auto it = index_.find(word);
  return it == index_.end() ? unk() : it->second;
}

std::string UnifiedVocab::name(TokenId id) const {
  switch (kind(id)) {
    case TokenKind::Text:
      return text_[id];
    case TokenKind::Image:
      return image_token_name(id - text_.size());
    case TokenKind::Special:
      return kSpecialNames[id - bot()];
  }
  return {};
}

void UnifiedVocab::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write vocab " + path);
  for (TokenId id = 0; id < size(); ++id) os << name(id) << '\n';
  if (!os) throw std::runtime_error("write failed for " + path);
}

UnifiedVocab UnifiedVocab::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open vocab " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) lines.push_back(line);
  if (lines.size() < 5 || lines.front() != kUnk) throw io::FormatError("vocab " + path + " does not start with <unk>");
  for (std::size_t i = 0; i < 4; ++i) {
    if (lines[lines.size() - 4 + i] != kSpecialNames[i]) {
      throw io::FormatError("vocab " + path + " does not end with the special tokens");
    }
  }
  std::vector<std::string> words;
  std::size_t i = 1;
  for (; i < lines.size() - 4 && lines[i].rfind("<img_", 0) != 0; ++i) words.push_back(lines[i]);
  std::size_t images = 0;
  for (; i < lines.size() - 4; ++i, ++images) {
    if (lines[i] != image_token_name(images)) throw io::FormatError("vocab " + path + ": unexpected line '" + lines[i] + "'");
  }
  return UnifiedVocab(std::move(words), images);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto is_alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 && static_cast<unsigned char>(c) < 128; };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (is_alnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (c == '.' && !cur.empty() && std::isdigit(static_cast<unsigned char>(cur.back())) && i + 1 < text.size() &&
               std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
      cur.push_back('.');
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> collect_words(const std::vector<std::string>& corpus) {
  std::set<std::string> words;
  for (const auto& s : corpus) {
    for (auto& w : split_words(s)) words.insert(std::move(w));
  }
  return {words.begin(), words.end()};
}

std::vector<TokenId> tokenize_text(std::string_view text, const UnifiedVocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.text_id(w));
  return ids;
}

Codebook::Codebook(std::size_t patch_h, std::size_t patch_w, std::vector<std::vector<double>> centroids)
    : patch_h_(patch_h), patch_w_(patch_w), centroids_(std::move(centroids)) {
  if (centroids_.empty()) throw std::invalid_argument("codebook needs at least one centroid");
  for (const auto& c : centroids_) {
    if (c.size() != patch_dim()) throw std::invalid_argument("centroid dimension does not match patch size");
    for (double v : c) {
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite centroid value");
    }
  }
}

std::size_t Codebook::nearest(const double* patch) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  const std::size_t dim = patch_dim();
  for (std::size_t k = 0; k < centroids_.size(); ++k) {
    const double* c = centroids_[k].data();
    double d = 0.0;
    for (std::size_t i = 0; i < dim; ++i) d += (patch[i] - c[i]) * (patch[i] - c[i]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

void Codebook::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write codebook " + path);
  io::write_bytes(os, "FVQ1");
  io::write_u32(os, static_cast<std::uint32_t>(size()));
  io::write_u32(os, static_cast<std::uint32_t>(patch_h_));
  io::write_u32(os, static_cast<std::uint32_t>(patch_w_));
  io::write_u32(os, static_cast<std::uint32_t>(Image::kChannels));
  for (const auto& c : centroids_) {
    for (double v : c) io::write_f64(os, v);
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

Codebook Codebook::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open codebook " + path);
  io::expect_magic(is, "FVQ1", path);
  const std::uint32_t k = io::read_u32(is, "codebook size");
  const std::uint32_t ph = io::read_u32(is, "patch height");
  const std::uint32_t pw = io::read_u32(is, "patch width");
  const std::uint32_t ch = io::read_u32(is, "patch channels");
  if (ch != Image::kChannels) throw io::FormatError("codebook " + path + " has " + std::to_string(ch) + " channels");
  if (k == 0 || k > (1u << 20) || ph == 0 || pw == 0 || ph * pw > 4096) {
    throw io::FormatError("implausible codebook header in " + path);
  }
  std::vector<std::vector<double>> cents(k, std::vector<double>(std::size_t{ph} * pw * ch));
  for (auto& c : cents) io::read_exact(is, c.data(), c.size() * sizeof(double), "centroids");
  return Codebook(ph, pw, std::move(cents));
}

std::vector<std::vector<double>> extract_patches(const Image& img, std::size_t patch_h, std::size_t patch_w) {
  if (img.height % patch_h != 0 || img.width % patch_w != 0) {
    throw std::invalid_argument("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                " not divisible by patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w));
  }
  std::vector<std::vector<double>> out;
  out.reserve((img.height / patch_h) * (img.width / patch_w));
  for (std::size_t py = 0; py < img.height; py += patch_h) {
    for (std::size_t px = 0; px < img.width; px += patch_w) {
      std::vector<double> p;
      p.reserve(patch_h * patch_w * Image::kChannels);
      for (std::size_t y = 0; y < patch_h; ++y) {
        for (std::size_t x = 0; x < patch_w; ++x) {
          for (std::size_t c = 0; c < Image::kChannels; ++c) p.push_back(img.at(py + y, px + x, c));
        }
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

Codebook build_codebook(const std::vector<Image>& corpus, std::size_t k, std::uint64_t seed, const KMeansOptions& opts) {
  if (corpus.empty()) throw std::invalid_argument("build_codebook: empty corpus");
  if (k == 0) throw std::invalid_argument("build_codebook: K must be positive");
  using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::size_t dim = opts.patch * opts.patch * Image::kChannels;

  std::vector<std::vector<double>> patches;
  for (const auto& img : corpus) {
    for (auto& p : extract_patches(img, opts.patch, opts.patch)) patches.push_back(std::move(p));
  }
  const std::set<std::vector<double>> distinct(patches.begin(), patches.end());
  if (k > distinct.size()) {
    throw std::invalid_argument("build_codebook: K=" + std::to_string(k) + " exceeds the " +
                                std::to_string(distinct.size()) + " distinct patches");
  }
  const auto n = static_cast<Eigen::Index>(patches.size());
  RMat X(n, static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) X(i, static_cast<Eigen::Index>(j)) = patches[static_cast<std::size_t>(i)][j];
  }
  const Eigen::VectorXd xnorm = X.rowwise().squaredNorm();

  // k-means++ seeding
  std::mt19937_64 rng(seed);
  RMat C(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(dim));
  C.row(0) = X.row(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
  Eigen::VectorXd d2 = (X.rowwise() - C.row(0)).rowwise().squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        r -= d2(pick);
        if (r < 0.0) break;
      }
      if (d2(pick) == 0.0) {
        for (pick = 0; d2(pick) == 0.0; ++pick) {
        }
      }
    }
    C.row(static_cast<Eigen::Index>(c)) = X.row(pick);
    d2 = d2.cwiseMin((X.rowwise() - C.row(static_cast<Eigen::Index>(c))).rowwise().squaredNorm());
  }

  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < opts.max_iterations; ++it) {
    const Eigen::VectorXd cnorm = C.rowwise().squaredNorm();
    const RMat dots = X * C.transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < C.rows(); ++c) {
        const double d = xnorm(i) - 2.0 * dots(i, c) + cnorm(c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assign[static_cast<std::size_t>(i)] = best;
    }
    RMat next = RMat::Zero(C.rows(), C.cols());
    std::vector<std::size_t> count(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      next.row(assign[static_cast<std::size_t>(i)]) += X.row(i);
      ++count[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (count[c] == 0) {
        next.row(ci) = C.row(ci);  // empty cluster keeps its centroid
      } else {
        next.row(ci) /= static_cast<double>(count[c]);
      }
      shift = std::max(shift, (next.row(ci) - C.row(ci)).norm());
    }
    C = std::move(next);
    if (shift < opts.tolerance) break;
  }

  std::vector<std::vector<double>> cents(k, std::vector<double>(dim));
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < dim; ++j) cents[c][j] = C(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j));
  }
  return Codebook(opts.patch, opts.patch, std::move(cents));
}

double quantization_mse(const std::vector<Image>& corpus, const Codebook& cb) {
  double s = 0.0;
  std::size_t count = 0;
  for (const auto& img : corpus) {
    for (const auto& p : extract_patches(img, cb.patch_h(), cb.patch_w())) {
      const auto& c = cb.centroid(cb.nearest(p.data()));
      for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - c[i]) * (p[i] - c[i]);
      count += p.size();
    }
  }
  return count ? s / static_cast<double>(count) : 0.0;
}

std::vector<std::size_t> quantize_image(const Image& img, const Codebook& cb) {
  std::vector<std::size_t> codes;
  for (const auto& p : extract_patches(img, cb.patch_h(), cb.patch_w())) codes.push_back(cb.nearest(p.data()));
  return codes;
}

std::vector<TokenId> tokenize_image(const Image& img, const Codebook& cb, const UnifiedVocab& vocab) {
  if (vocab.image_size() != cb.size()) throw std::invalid_argument("vocab image range does not match codebook size");
  std::vector<TokenId> ids;
  for (std::size_t c : quantize_image(img, cb)) ids.push_back(vocab.image_token(c));
  return ids;
}

Image dequantize_image(const std::vector<std::size_t>& codes, const Codebook& cb, std::size_t grid_h,
                       std::size_t grid_w) {
  if (codes.size() != grid_h * grid_w) {
    throw std::invalid_argument("token count " + std::to_string(codes.size()) + " does not match grid " +
                                std::to_string(grid_h) + "x" + std::to_string(grid_w));
  }
  const std::size_t ph = cb.patch_h(), pw = cb.patch_w();
  Image img(grid_h * ph, grid_w * pw);
  for (std::size_t g = 0; g < codes.size(); ++g) {
    if (codes[g] >= cb.size()) throw std::out_of_range("code " + std::to_string(codes[g]) + " outside codebook");
    const auto& c = cb.centroid(codes[g]);
    const std::size_t py = (g / grid_w) * ph, px = (g % grid_w) * pw;
    std::size_t i = 0;
    for (std::size_t y = 0; y < ph; ++y) {
      for (std::size_t x = 0; x < pw; ++x) {
        for (std::size_t ch = 0; ch < Image::kChannels; ++ch) img.at(py + y, px + x, ch) = c[i++];
      }
    }
  }
  return img;
}

Image detokenize_image(const std::vector<TokenId>& tokens, const Codebook& cb, const UnifiedVocab& vocab,
                       std::size_t grid_h, std::size_t grid_w) {
  std::vector<std::size_t> codes;
  codes.reserve(tokens.size());
  for (TokenId t : tokens) codes.push_back(vocab.image_code(t));
  return dequantize_image(codes, cb, grid_h, grid_w);
}

MultimodalTokenizer::MultimodalTokenizer(UnifiedVocab v, Codebook cb) : vocab(std::move(v)), codebook(std::move(cb)) {
  if (vocab.image_size() != codebook.size()) {
    throw std::invalid_argument("vocab has " + std::to_string(vocab.image_size()) + " image tokens but codebook has " +
                                std::to_string(codebook.size()) + " centroids");
  }
}

}  // namespace efuse::tok
