#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "efuse/encoder/encoder.hpp"
#include "efuse/losses/losses.hpp"
#include "efuse/numcore/ops.hpp"
#include "fixtures.hpp"

using namespace efuse;
using namespace efuse::enc;
using nc::Tensor;

namespace {

ModelConfig small_config(std::size_t context = 96) {
  ModelConfig c;
  c.layers = 1;
  c.width = 16;
  c.heads = 2;
  c.context = context;
  c.mlp_hidden = 32;
  c.fusion_layers = 1;
  c.vocab_size = fixtures::tokenizer().vocab.size();
  return c;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double norm(const std::vector<double>& a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  return {t.data().begin() + r * t.cols(), t.data().begin() + (r + 1) * t.cols()};
}

std::vector<double> tower_embedding(const Model& m, const std::vector<TokenSequence>& seqs, std::size_t r) {
  nc::Graph g(&m.params);
  return row(encode_tower(g, m.config, "enc", seqs).embedding.value(), r);
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("sequence layout") {
  const auto& tk = fixtures::tokenizer();
  const auto& v = tk.vocab;
  SUBCASE("text only") {
    const auto s = build_sequence(MultimodalInput::of_text("a"), tk, 10);
    const TokenId a = v.text_id("a");
    REQUIRE(a != v.unk());
    CHECK(s.ids == std::vector<TokenId>{v.bot(), a, v.eot(), v.pad(), v.pad(), v.pad(), v.pad(), v.pad(), v.pad(), v.pad()});
    CHECK(s.attention_mask == std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0, 0, 0, 0, 0});
    CHECK(s.eot_position == 2);
  }
  SUBCASE("image only gets an empty text") {
    const auto s = build_sequence(MultimodalInput::of_image(fixtures::image(1)), tk, 96);
    CHECK(s.real_length() == 66);
    CHECK(s.ids[64] == v.bot());
    CHECK(s.ids[65] == v.eot());
    for (std::size_t i = 0; i < 64; ++i) CHECK(v.kind(s.ids[i]) == tok::TokenKind::Image);
    std::size_t real = 0;
    for (auto m : s.attention_mask) real += m;
    CHECK(real == 66);
  }
  SUBCASE("image precedes text") {
    const auto s = build_sequence(MultimodalInput::of(fixtures::image(2), "rotate 30° clockwise"), tk, 96);
    CHECK(s.ids[64] == v.bot());
    CHECK(s.ids[s.eot_position] == v.eot());
    CHECK(s.eot_position == 65 + tk.text("rotate 30° clockwise").size());
    std::size_t eots = 0;
    for (std::size_t i = 0; i < s.ids.size(); ++i) eots += s.attention_mask[i] && s.ids[i] == v.eot();
    CHECK(eots == 1);
  }
  SUBCASE("overflow and empty input are errors") {
    CHECK_THROWS_AS(build_sequence(MultimodalInput::of(fixtures::image(2), "crop to upper left"), tk, 66), SequenceOverflow);
    CHECK_THROWS_AS(build_sequence(MultimodalInput{}, tk, 96), std::invalid_argument);
  }
}

TEST_CASE("embeddings have unit norm for every model kind") {
  const auto& tk = fixtures::tokenizer();
  const std::vector<MultimodalInput> inputs = {MultimodalInput::of_image(fixtures::image(3)),
                                               MultimodalInput::of_text("a photo of a red circle"),
                                               MultimodalInput::of(fixtures::image(4), "horizontal flip")};
  for (auto kind : {ModelKind::FuseLip, ModelKind::DualSF, ModelKind::DualMLF}) {
    const Model m = init_model(kind, small_config(), 7);
    for (const auto& e : embed(m, tk, inputs)) {
      CHECK(e.size() == 16);
      CHECK(norm(e) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("padding length does not change the embedding") {
  const auto& tk = fixtures::tokenizer();
  const Model m = init_model(ModelKind::FuseLip, small_config(128), 3);
  const MultimodalInput in = MultimodalInput::of_text("a photo of a red circle on a black background");
  const auto e64 = tower_embedding(m, {build_sequence(in, tk, 64)}, 0);
  const auto e128 = tower_embedding(m, {build_sequence(in, tk, 128)}, 0);
  CHECK(max_abs_diff(e64, e128) <= 1e-9);
  // batched next to a longer sequence, so real padding is attended over
  const auto mixed = tower_embedding(
      m, {build_sequence(MultimodalInput::of_text("crop"), tk, 128), build_sequence(in, tk, 128)}, 0);
  CHECK(max_abs_diff(mixed, tower_embedding(m, {build_sequence(MultimodalInput::of_text("crop"), tk, 128)}, 0)) <= 1e-9);
}

TEST_CASE("swapping two real tokens changes the embedding") {
  const auto& tk = fixtures::tokenizer();
  const Model m = init_model(ModelKind::FuseLip, small_config(), 4);
  auto s = build_sequence(MultimodalInput::of_text("rotate 30° clockwise"), tk, 96);
  const auto base = tower_embedding(m, {s}, 0);
  std::swap(s.ids[1], s.ids[3]);
  REQUIRE(s.ids[1] != s.ids[3]);
  CHECK(max_abs_diff(base, tower_embedding(m, {s}, 0)) > 1e-9);
}

TEST_CASE("masked-token head") {
  ModelConfig c;
  c.layers = 1;
  c.width = 4;
  c.heads = 1;
  c.context = 8;
  c.mlp_hidden = 4;
  c.vocab_size = 4;
  Model m = init_model(ModelKind::FuseLip, c, 0);
  const std::vector<double> E = {0.5, -1.0, 0.25, 2.0, 1.5, 0.0, -0.5, 1.0, -2.0, 0.75, 1.0, -0.25, 0.0, 1.0, 0.5, 0.5};
  m.params["enc.tok_emb"] = Tensor({4, 4}, E);
  m.params["head.bias"] = Tensor({4}, std::vector<double>{0.1, -0.2, 0.3, 0.0});
  const std::vector<double> hidden = {0.3, -1.2, 2.0, 0.7, -0.4, 0.9, 0.0, -1.5};

  SUBCASE("hand matrix product") {
    Tensor eye({4, 4}, 0.0);
    for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
    m.params["head.dense.w"] = eye;
    m.params["head.dense.b"] = Tensor({4}, 0.0);
    nc::Graph g(&m.params);
    const std::size_t rows[] = {1, 0};
    const Tensor logits = predict_masked(g, g.constant(Tensor({2, 4}, hidden)), rows).value();
    REQUIRE(logits.shape() == nc::Shape{2, 4});
    for (std::size_t r = 0; r < 2; ++r) {
      const std::size_t src = rows[r];
      double u[4], mu = 0.0, var = 0.0;
      for (int k = 0; k < 4; ++k) mu += (u[k] = gelu_ref(hidden[src * 4 + k])) / 4.0;
      for (int k = 0; k < 4; ++k) var += (u[k] - mu) * (u[k] - mu) / 4.0;
      for (int v = 0; v < 4; ++v) {
        double z = m.params["head.bias"][v];
        for (int k = 0; k < 4; ++k) z += (u[k] - mu) / std::sqrt(var + nc::kLayerNormEps) * E[v * 4 + k];
        CHECK(logits.at(r, v) == doctest::Approx(z).epsilon(1e-12));
      }
    }
  }
  SUBCASE("zero hidden weights give the bias") {
    m.params["head.dense.w"] = Tensor({4, 4}, 0.0);
    m.params["head.bias"] = Tensor({4}, 0.0);
    nc::Graph g(&m.params);
    const std::size_t rows[] = {0, 1};
    const Tensor logits = predict_masked(g, g.constant(Tensor({2, 4}, hidden)), rows).value();
    for (double v : logits.data()) CHECK(v == 0.0);
  }
  SUBCASE("unembedding is tied to the token embedding") {
    const std::size_t rows[] = {0};
    nc::Graph g1(&m.params);
    const Tensor before = predict_masked(g1, g1.constant(Tensor({2, 4}, hidden)), rows).value();
    m.params["enc.tok_emb"][5] += 0.5;
    nc::Graph g2(&m.params);
    const Tensor after = predict_masked(g2, g2.constant(Tensor({2, 4}, hidden)), rows).value();
    CHECK(before.at(0, 1) != after.at(0, 1));
    CHECK(before.at(0, 0) == after.at(0, 0));
  }
}

TEST_CASE("score fusion") {
  auto sf = [](std::vector<double> a, std::vector<double> b) { return score_fusion_embed(a, b); };
  const auto r = sf({1.0, 0.0}, {0.6, 0.8});
  CHECK(r[0] == doctest::Approx(0.894427191).epsilon(1e-9));
  CHECK(r[1] == doctest::Approx(0.447213595).epsilon(1e-9));
  const auto o = sf({1.0, 0.0}, {0.0, 1.0});
  CHECK(o[0] == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(o[1] == doctest::Approx(1.0 / std::sqrt(2.0)));
  const auto same = sf({0.6, 0.8}, {0.6, 0.8});
  CHECK(same[0] == doctest::Approx(0.6));
  CHECK(same[1] == doctest::Approx(0.8));
  CHECK_THROWS_AS(sf({1.0, 0.0}, {-1.0, 0.0}), std::domain_error);
}

TEST_CASE("score fusion passes a single modality through") {
  const auto& tk = fixtures::tokenizer();
  const Model m = init_model(ModelKind::DualSF, small_config(), 5);
  const std::vector<MultimodalInput> in = {MultimodalInput::of_text("horizontal flip"),
                                           MultimodalInput::of_image(fixtures::image(8)),
                                           MultimodalInput::of(fixtures::image(8), "horizontal flip")};
  const auto e = embed(m, tk, in);
  CHECK(max_abs_diff(e[2], score_fusion_embed(e[1], e[0])) <= 1e-12);
}

TEST_CASE("late fusion module") {
  const auto& tk = fixtures::tokenizer();
  const Model m = init_model(ModelKind::DualMLF, small_config(), 6);
  const std::vector<MultimodalInput> text_only = {MultimodalInput::of_text("vertical flip")};
  const auto a = embed(m, tk, text_only), b = embed(m, tk, text_only);
  CHECK(a == b);
  CHECK(norm(a[0]) == doctest::Approx(1.0).epsilon(1e-9));

  nc::ParamMap frozen = m.params;
  nc::Graph g(&frozen);
  std::vector<TokenSequence> ts = {build_sequence({}, tk.text("vertical flip"), tk.vocab, 96)};
  const nc::Var txt = encode_tower(g, m.config, "txt", ts).pooled;
  const nc::Var zero = g.constant(Tensor({1, 16}, 0.0));
  SUBCASE("text-only input uses a zero image slot") {
    CHECK(max_abs_diff(row(mlf_embed(g, m.config, zero, txt).value(), 0), a[0]) <= 1e-12);
  }
  SUBCASE("slot order matters") {
    std::vector<TokenSequence> is = {build_sequence(tk.image(fixtures::image(9)), {}, tk.vocab, 96)};
    const nc::Var img = encode_tower(g, m.config, "img", is).pooled;
    const auto fwd = row(mlf_embed(g, m.config, img, txt).value(), 0);
    const auto swapped = row(mlf_embed(g, m.config, txt, img).value(), 0);
    CHECK(norm(fwd) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(max_abs_diff(fwd, swapped) > 1e-9);
  }
}

TEST_CASE("contrastive gradient reaches the text token embeddings") {
  const auto& tk = fixtures::tokenizer();
  Model m = init_model(ModelKind::FuseLip, small_config(), 8);
  const std::vector<MultimodalInput> q = {MultimodalInput::of(fixtures::image(1), "horizontal flip"),
                                          MultimodalInput::of(fixtures::image(2), "vertical flip")};
  const std::vector<MultimodalInput> t = {MultimodalInput::of_image(fixtures::image(3)),
                                          MultimodalInput::of_image(fixtures::image(4))};
  nc::Graph g(&m.params);
  const nc::Var e1 = embed_batch(g, m, tk, q), e2 = embed_batch(g, m, tk, t);
  const auto vg = nc::forward_backward(
      g, loss::siglip_mm_loss(e1, e2, loss::diagonal_labels(2), g.param("loss.log_t"), g.param("loss.b")));
  const Tensor& ge = vg.grads.at("enc.tok_emb");
  for (const char* w : {"horizontal", "vertical", "flip"}) {
    const TokenId id = tk.vocab.text_id(w);
    double s = 0.0;
    for (std::size_t c = 0; c < 16; ++c) s += std::abs(ge.at(id, c));
    CHECK(s > 0.0);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto& tk = fixtures::tokenizer();
  const auto dir = std::filesystem::temp_directory_path();
  const std::vector<MultimodalInput> in = {MultimodalInput::of(fixtures::image(1), "crop to lower right"),
                                           MultimodalInput::of_text("a drawing of a square")};
  for (auto kind : {ModelKind::FuseLip, ModelKind::DualSF, ModelKind::DualMLF}) {
    const Model m = init_model(kind, small_config(), 9);
    const auto path = (dir / ("efuse_ckpt_" + std::string(model_kind_name(kind)) + ".bin")).string();
    save_checkpoint(m, path);
    const Model back = load_checkpoint(path);
    CHECK(back.kind == kind);
    ModelConfig expect = m.config;
    // fusion depth is only stored through the fusion parameters
    if (kind != ModelKind::DualMLF) expect.fusion_layers = ModelConfig{}.fusion_layers;
    CHECK(back.config == expect);
    CHECK(back.params == m.params);
    CHECK(embed(back, tk, in) == embed(m, tk, in));

    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 3);
    CHECK_THROWS(load_checkpoint(path));
    save_checkpoint(m, path);
    {
      std::ofstream os(path, std::ios::binary | std::ios::app);
      os << "junk";
    }
    CHECK_THROWS(load_checkpoint(path));
    {
      std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
      f.seekp(0);
      f << "XLIP";
    }
    CHECK_THROWS(load_checkpoint(path));
    std::filesystem::remove(path);
  }
}

TEST_CASE("model kind names") {
  for (auto kind : {ModelKind::FuseLip, ModelKind::DualSF, ModelKind::DualMLF}) {
    CHECK(parse_model_kind(model_kind_name(kind)) == kind);
  }
  CHECK_THROWS_AS(parse_model_kind("clip"), std::invalid_argument);
}
