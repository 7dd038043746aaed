#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "efuse/image.hpp"

namespace efuse {

/// Optional image plus optional text; at least one must be present.
struct MultimodalInput {
  std::optional<Image> image;
  std::optional<std::string> text;

  bool valid() const { return image.has_value() || text.has_value(); }
  static MultimodalInput of_image(Image img) { return {std::move(img), std::nullopt}; }
  static MultimodalInput of_text(std::string t) { return {std::nullopt, std::move(t)}; }
  static MultimodalInput of(Image img, std::string t) { return {std::move(img), std::move(t)}; }
};

/// Two inputs that should embed close together. Pairs sharing a group id are
/// hard negatives of each other.
struct TrainingPair {
  MultimodalInput first;
  MultimodalInput second;
  std::size_t group = 0;
  std::string task;
};

/// A query, an ordered candidate pool and the index of the correct candidate.
struct RetrievalTask {
  std::string task;
  MultimodalInput query;
  std::vector<MultimodalInput> candidates;
  std::size_t ground_truth = 0;
};

}  // namespace efuse
