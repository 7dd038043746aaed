#pragma once

#include "efuse/tgit/tgit.hpp"
#include "efuse/tokenizer/tokenizer.hpp"

namespace fixtures {

/// Small codebook over a handful of shapes images; full template vocabulary.
inline const efuse::tok::MultimodalTokenizer& tokenizer() {
  static const efuse::tok::MultimodalTokenizer tk = [] {
    std::vector<efuse::Image> imgs;
    for (std::uint64_t s = 0; s < 20; ++s) imgs.push_back(efuse::tgit::generate_shapes_image(s, 32));
    auto cb = efuse::tok::build_codebook(imgs, 16, 1);
    efuse::tok::UnifiedVocab vocab(efuse::tok::collect_words(efuse::tgit::template_corpus()), cb.size());
    return efuse::tok::MultimodalTokenizer(std::move(vocab), std::move(cb));
  }();
  return tk;
}

inline efuse::Image image(std::uint64_t seed) { return efuse::tgit::generate_shapes_image(seed, 32); }

}  // namespace fixtures
