#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "efuse/image.hpp"

namespace efuse::tok {

using TokenId = std::size_t;

enum class TokenKind { Text, Image, Special };

/// Single id space: text [0, V_t), image [V_t, V_t + V_i), then the four
/// specials <bot>, <eot>, <mask>, <pad>. Text id 0 is <unk>.
class UnifiedVocab {
 public:
  static constexpr const char* kUnk = "<unk>";

  UnifiedVocab() = default;
  /// `words` must not contain <unk>; they are assigned ids 1.. in order.
  UnifiedVocab(std::vector<std::string> words, std::size_t image_codebook_size);

  std::size_t text_size() const { return text_.size(); }
  std::size_t image_size() const { return image_size_; }
  std::size_t size() const { return text_.size() + image_size_ + 4; }

  TokenId unk() const { return 0; }
  TokenId bot() const { return text_.size() + image_size_; }
  TokenId eot() const { return bot() + 1; }
  TokenId mask() const { return bot() + 2; }
  TokenId pad() const { return bot() + 3; }
  TokenId image_token(std::size_t code) const;
  std::size_t image_code(TokenId id) const;

  TokenKind kind(TokenId id) const;
  bool is_special(TokenId id) const { return kind(id) == TokenKind::Special; }

  /// Text id for a word, or unk() when absent.
  TokenId text_id(std::string_view word) const;
  /// Printable name of any id.
  std::string name(TokenId id) const;

  /// One token name per line; line number = id.
  void save(const std::string& path) const;
  static UnifiedVocab load(const std::string& path);

  friend bool operator==(const UnifiedVocab& a, const UnifiedVocab& b) {
    return a.text_ == b.text_ && a.image_size_ == b.image_size_;
  }

 private:
  std::vector<std::string> text_;
  std::map<std::string, TokenId, std::less<>> index_;
  std::size_t image_size_ = 0;
};

/// Lowercased word split. Words are maximal runs of [a-z0-9]; a '.' between
/// two digits stays inside the word ("2.0"). Everything else separates.
std::vector<std::string> split_words(std::string_view text);

/// Sorted, de-duplicated words of a template corpus.
std::vector<std::string> collect_words(const std::vector<std::string>& corpus);

std::vector<TokenId> tokenize_text(std::string_view text, const UnifiedVocab& vocab);

/// Frozen patch codebook standing in for a learned image tokenizer.
class Codebook {
 public:
  Codebook(std::size_t patch_h, std::size_t patch_w, std::vector<std::vector<double>> centroids);

  std::size_t size() const { return centroids_.size(); }
  std::size_t patch_h() const { return patch_h_; }
  std::size_t patch_w() const { return patch_w_; }
  std::size_t patch_dim() const { return patch_h_ * patch_w_ * Image::kChannels; }
  const std::vector<double>& centroid(std::size_t k) const { return centroids_.at(k); }
  bool frozen() const { return true; }

  /// Index of the nearest centroid (squared L2); ties go to the lowest index.
  std::size_t nearest(const double* patch) const;

  /// "FVQ1", K, patch_h, patch_w, channels (LE u32), then centroids as LE f64.
  void save(const std::string& path) const;
  static Codebook load(const std::string& path);

  friend bool operator==(const Codebook&, const Codebook&) = default;

 private:
  std::size_t patch_h_;
  std::size_t patch_w_;
  std::vector<std::vector<double>> centroids_;
};

struct KMeansOptions {
  std::size_t patch = 4;
  int max_iterations = 50;
  double tolerance = 1e-6;
};

/// Non-overlapping patches of img in raster order, each flattened (y, x, c).
std::vector<std::vector<double>> extract_patches(const Image& img, std::size_t patch_h, std::size_t patch_w);

/// k-means (k-means++ seeding, deterministic for a seed) over all patches.
Codebook build_codebook(const std::vector<Image>& corpus, std::size_t k, std::uint64_t seed,
                        const KMeansOptions& opts = {});

/// Mean squared error between each patch and its nearest centroid.
double quantization_mse(const std::vector<Image>& corpus, const Codebook& cb);

/// One token per patch in raster order, offset into the vocab's image range.
std::vector<TokenId> tokenize_image(const Image& img, const Codebook& cb, const UnifiedVocab& vocab);
/// Raw centroid indices (no vocab offset).
std::vector<std::size_t> quantize_image(const Image& img, const Codebook& cb);

/// Tiles centroids back into an image of grid_h x grid_w patches.
Image detokenize_image(const std::vector<TokenId>& tokens, const Codebook& cb, const UnifiedVocab& vocab,
                       std::size_t grid_h, std::size_t grid_w);
Image dequantize_image(const std::vector<std::size_t>& codes, const Codebook& cb, std::size_t grid_h,
                       std::size_t grid_w);

/// Vocabulary plus the frozen image codebook it was sized for.
struct MultimodalTokenizer {
  UnifiedVocab vocab;
  Codebook codebook;

  MultimodalTokenizer(UnifiedVocab v, Codebook cb);
  std::vector<TokenId> image(const Image& img) const { return tokenize_image(img, codebook, vocab); }
  std::vector<TokenId> text(std::string_view t) const { return tokenize_text(t, vocab); }
};

}  // namespace efuse::tok
