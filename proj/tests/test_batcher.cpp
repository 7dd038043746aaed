#include <doctest.h>

#include <map>
#include <set>

#include "efuse/batcher/batcher.hpp"
#include "fixtures.hpp"

using namespace efuse;
using namespace efuse::batch;

namespace {

const ShapesCorpus kCorpus{0, 200, 32};

std::map<std::size_t, std::size_t> group_sizes(const Batch& b) {
  std::map<std::size_t, std::size_t> out;
  for (const auto& p : b.pairs) ++out[p.group];
  return out;
}

std::vector<StreamSpec> single(std::unique_ptr<TaskStream> s) {
  std::vector<StreamSpec> v;
  v.push_back({std::move(s), 1.0});
  return v;
}

std::vector<StreamSpec> all_streams() {
  std::vector<StreamSpec> v;
  for (auto k : {tgit::TransformKind::Crop, tgit::TransformKind::Rotate, tgit::TransformKind::Flip,
                 tgit::TransformKind::Jitter, tgit::TransformKind::Colorize}) {
    v.push_back({make_tgit_stream(k, kCorpus), 1.0});
  }
  v.push_back({make_caption_stream(kCorpus), 1.0});
  v.push_back({make_vg_crop_stream(kCorpus), 1.0});
  return v;
}

}  // namespace

TEST_CASE("hard-negative group sizes") {
  const std::pair<tgit::TransformKind, std::size_t> cases[] = {{tgit::TransformKind::Crop, 9},
                                                               {tgit::TransformKind::Rotate, 4},
                                                               {tgit::TransformKind::Flip, 4},
                                                               {tgit::TransformKind::Jitter, 4},
                                                               {tgit::TransformKind::Colorize, 2}};
  for (const auto& [kind, size] : cases) {
    Rng rng(1);
    auto s = make_tgit_stream(kind, kCorpus);
    CHECK(s->group_size() == size);
    for (int i = 0; i < 5; ++i) CHECK(s->next_group(rng).size() == size);
  }
  Rng rng(2);
  auto vg = make_vg_crop_stream(kCorpus);
  for (int i = 0; i < 20; ++i) {
    const auto g = vg->next_group(rng);
    CHECK(g.size() >= 1);
    CHECK(g.size() <= 4);
  }
}

TEST_CASE("groups share an id inside a batch") {
  Rng rng(3);
  BatchComposer crop(single(make_tgit_stream(tgit::TransformKind::Crop, kCorpus)), 18, true);
  for (const auto& [id, n] : group_sizes(crop.compose(rng))) CHECK(n == 9);
  BatchComposer flip(single(make_tgit_stream(tgit::TransformKind::Flip, kCorpus)), 16, true);
  for (const auto& [id, n] : group_sizes(flip.compose(rng))) CHECK(n == 4);
}

TEST_CASE("every batch is filled exactly") {
  Rng rng(4);
  BatchComposer c(all_streams(), 64, true);
  std::set<std::size_t> seen;
  for (int i = 0; i < 10; ++i) {
    const Batch b = c.compose(rng);
    CHECK(b.pairs.size() == 64);
    std::size_t total = 0;
    for (const auto& [id, n] : group_sizes(b)) {
      total += n;
      CHECK(seen.insert(id).second);  // group ids never repeat across batches
    }
    CHECK(total == 64);
  }
}

TEST_CASE("a group that does not fit opens the next batch") {
  Rng rng(5);
  BatchComposer c(single(make_tgit_stream(tgit::TransformKind::Crop, kCorpus)), 20, true);
  const Batch first = c.compose(rng);
  const auto sizes = group_sizes(first);
  std::size_t full = 0;
  for (const auto& [id, n] : sizes) full += n == 9 ? 1 : 0;
  CHECK(full == 2);
  CHECK(sizes.size() == 4);
  const Batch second = c.compose(rng);
  CHECK(group_sizes(second).at(second.pairs.front().group) == 9);
}

TEST_CASE("without hard negatives every pair is its own group") {
  Rng rng(6);
  BatchComposer c(all_streams(), 64, false);
  for (int i = 0; i < 3; ++i) {
    const auto sizes = group_sizes(c.compose(rng));
    CHECK(sizes.size() == 64);
  }
}

TEST_CASE("composition is deterministic") {
  auto run = [] {
    Rng rng(7);
    BatchComposer c(all_streams(), 32, true);
    std::vector<std::string> out;
    for (int i = 0; i < 3; ++i) {
      for (const auto& p : c.compose(rng).pairs) out.push_back(p.task + "|" + p.first.text.value_or("") + "|" +
                                                                std::to_string(p.group));
    }
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("stream weights set the task mix") {
  std::vector<StreamSpec> v;
  v.push_back({make_caption_stream(kCorpus), 3.0});
  v.push_back({make_tgit_stream(tgit::TransformKind::Flip, kCorpus), 1.0});
  BatchComposer c(std::move(v), 42, false);
  Rng rng(8);
  std::map<std::string, std::size_t> count;
  for (int i = 0; i < 5; ++i)
    for (const auto& p : c.compose(rng).pairs) ++count[p.task];
  // weight x group size: 3 x 1 against 1 x 4, so 42 pairs are six full cycles
  CHECK(count["caption"] * 4 == count["flip"] * 3);
}

TEST_CASE("composer rejects groups larger than the batch") {
  CHECK_THROWS_AS(BatchComposer(single(make_tgit_stream(tgit::TransformKind::Crop, kCorpus)), 8, true),
                  std::invalid_argument);
  CHECK_NOTHROW(BatchComposer(single(make_tgit_stream(tgit::TransformKind::Crop, kCorpus)), 8, false));
}

TEST_CASE("masking") {
  const auto& tk = fixtures::tokenizer();
  const auto& v = tk.vocab;
  std::vector<enc::TokenSequence> seqs;
  Rng data(9);
  for (std::size_t i = 0; i < 40; ++i) {
    const auto scene = kCorpus.scene(i);
    seqs.push_back(enc::build_sequence(MultimodalInput::of(scene.image, scene_caption(scene)), tk, 96));
    seqs.push_back(enc::build_sequence(MultimodalInput::of_text(object_description(scene, 0)), tk, 96));
  }
  std::size_t eligible_per_pass = 0;
  for (const auto& s : seqs)
    for (std::size_t t = 0; t < s.ids.size(); ++t)
      eligible_per_pass += s.attention_mask[t] && !v.is_special(s.ids[t]) ? 1 : 0;

  SUBCASE("p = 0 masks nothing") {
    Rng rng(1);
    const auto m = apply_masking(seqs, default_mask_config(v, 0.0), rng);
    CHECK(m.masked_count() == 0);
    for (std::size_t i = 0; i < seqs.size(); ++i) CHECK(m.seqs[i].ids == seqs[i].ids);
  }
  SUBCASE("rate and specials") {
    Rng rng(10);
    const auto cfg = default_mask_config(v, 0.1);
    std::size_t eligible = 0, masked = 0;
    while (eligible < 100000) {
      const auto m = apply_masking(seqs, cfg, rng);
      eligible += eligible_per_pass;
      masked += m.masked_count();
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        REQUIRE(m.positions[i].size() == m.labels[i].size());
        for (std::size_t j = 0; j < m.positions[i].size(); ++j) {
          const std::size_t pos = m.positions[i][j];
          CHECK(seqs[i].attention_mask[pos] == 1);
          CHECK_FALSE(v.is_special(m.labels[i][j]));
          CHECK(m.labels[i][j] == seqs[i].ids[pos]);
          CHECK(m.seqs[i].ids[pos] == v.mask());
        }
        std::size_t changed = 0;
        for (std::size_t t = 0; t < seqs[i].ids.size(); ++t) changed += m.seqs[i].ids[t] != seqs[i].ids[t];
        CHECK(changed == m.positions[i].size());
      }
    }
    const double rate = static_cast<double>(masked) / static_cast<double>(eligible);
    CHECK(rate >= 0.094);
    CHECK(rate <= 0.106);
  }
  SUBCASE("both sides are masked independently") {
    Rng rng(11);
    const auto mb = apply_masking(seqs, seqs, default_mask_config(v, 0.3), rng);
    CHECK(mb.first.masked_count() > 0);
    CHECK(mb.second.masked_count() > 0);
    CHECK(mb.first.positions != mb.second.positions);
  }
  SUBCASE("invalid probability") {
    Rng rng(12);
    CHECK_THROWS_AS(apply_masking(seqs, default_mask_config(v, 1.0), rng), std::invalid_argument);
  }
}
