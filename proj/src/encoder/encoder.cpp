#include "efuse/encoder/encoder.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>

#include "efuse/binary_io.hpp"
#include "efuse/numcore/ops.hpp"

namespace efuse::enc {

using nc::Graph;
using nc::Tensor;
using nc::Var;

namespace {

constexpr double kInitStd = 0.02;

std::string block_name(const std::string& prefix, std::size_t i) { return prefix + ".block" + std::to_string(i); }

void add_block_params(nc::ParamMap& p, const std::string& b, std::size_t d, std::size_t m) {
  p[b + ".ln1.gamma"] = Tensor({d}, 1.0);
  p[b + ".ln1.beta"] = Tensor({d}, 0.0);
  for (const char* w : {"wq", "wk", "wv", "wo"}) p[b + ".attn." + w] = Tensor({d, d});
  for (const char* c : {"bq", "bk", "bv", "bo"}) p[b + ".attn." + c] = Tensor({d}, 0.0);
  p[b + ".ln2.gamma"] = Tensor({d}, 1.0);
  p[b + ".ln2.beta"] = Tensor({d}, 0.0);
  p[b + ".mlp.w1"] = Tensor({d, m});
  p[b + ".mlp.b1"] = Tensor({m}, 0.0);
  p[b + ".mlp.w2"] = Tensor({m, d});
  p[b + ".mlp.b2"] = Tensor({d}, 0.0);
}

void add_tower_params(nc::ParamMap& p, const std::string& prefix, const ModelConfig& cfg) {
  p[prefix + ".tok_emb"] = Tensor({cfg.vocab_size, cfg.width});
  p[prefix + ".pos_emb"] = Tensor({cfg.context, cfg.width});
  for (std::size_t i = 0; i < cfg.layers; ++i) add_block_params(p, block_name(prefix, i), cfg.width, cfg.mlp_hidden);
  p[prefix + ".ln_f.gamma"] = Tensor({cfg.width}, 1.0);
  p[prefix + ".ln_f.beta"] = Tensor({cfg.width}, 0.0);
}

bool is_gaussian_init(const std::string& name) {
  // weights and embeddings; biases, norms and the loss scalars are constant-initialized
  const auto leaf = name.substr(name.rfind('.') + 1);
  return leaf.starts_with("w") || leaf == "tok_emb" || leaf == "pos_emb" || leaf == "slot_emb" || leaf == "query";
}

/// Pre-norm block over a batch of n_seq sequences of seq_len rows each.
Var transformer_block(Graph& g, const std::string& b, Var x, std::span<const std::uint8_t> key_mask, std::size_t n_seq,
                      std::size_t seq_len, std::size_t heads) {
  Var h = nc::layer_norm(x, g.param(b + ".ln1.gamma"), g.param(b + ".ln1.beta"));
  Var q = nc::linear(h, g.param(b + ".attn.wq"), g.param(b + ".attn.bq"));
  Var k = nc::linear(h, g.param(b + ".attn.wk"), g.param(b + ".attn.bk"));
  Var v = nc::linear(h, g.param(b + ".attn.wv"), g.param(b + ".attn.bv"));
  Var a = nc::attention(q, k, v, key_mask, n_seq, seq_len, heads);
  x = nc::add(x, nc::linear(a, g.param(b + ".attn.wo"), g.param(b + ".attn.bo")));
  h = nc::layer_norm(x, g.param(b + ".ln2.gamma"), g.param(b + ".ln2.beta"));
  h = nc::gelu(nc::linear(h, g.param(b + ".mlp.w1"), g.param(b + ".mlp.b1")));
  return nc::add(x, nc::linear(h, g.param(b + ".mlp.w2"), g.param(b + ".mlp.b2")));
}

bool has_param(const nc::ParamMap& p, const std::string& name) { return p.count(name) != 0; }

}  // namespace

TokenSequence build_sequence(std::span<const TokenId> image_tokens, std::span<const TokenId> text_tokens,
                             const tok::UnifiedVocab& vocab, std::size_t context) {
  const std::size_t real = image_tokens.size() + text_tokens.size() + 2;
  if (real > context) {
    throw SequenceOverflow("sequence of " + std::to_string(image_tokens.size()) + " image + " +
                           std::to_string(text_tokens.size()) + " text + 2 special tokens exceeds context " +
                           std::to_string(context));
  }
  TokenSequence s;
  s.ids.reserve(context);
  s.ids.insert(s.ids.end(), image_tokens.begin(), image_tokens.end());
  s.ids.push_back(vocab.bot());
  s.ids.insert(s.ids.end(), text_tokens.begin(), text_tokens.end());
  s.eot_position = s.ids.size();
  s.ids.push_back(vocab.eot());
  s.attention_mask.assign(s.ids.size(), 1);
  s.ids.resize(context, vocab.pad());
  s.attention_mask.resize(context, 0);
  return s;
}

TokenSequence build_sequence(const MultimodalInput& input, const tok::MultimodalTokenizer& tk, std::size_t context) {
  if (!input.valid()) throw std::invalid_argument("build_sequence: input has neither image nor text");
  std::vector<TokenId> img, txt;
  if (input.image) img = tk.image(*input.image);
  if (input.text) txt = tk.text(*input.text);
  return build_sequence(img, txt, tk.vocab, context);
}

std::string_view model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::FuseLip:
      return "fuselip";
    case ModelKind::DualSF:
      return "dual_sf";
    case ModelKind::DualMLF:
      return "dual_mlf";
  }
  return "";
}

ModelKind parse_model_kind(std::string_view name) {
  for (auto k : {ModelKind::FuseLip, ModelKind::DualSF, ModelKind::DualMLF}) {
    if (model_kind_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "' (fuselip, dual_sf, dual_mlf)");
}

std::vector<std::string> tower_prefixes(ModelKind kind) {
  if (kind == ModelKind::FuseLip) return {"enc"};
  return {"img", "txt"};
}

Model init_model(ModelKind kind, const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.vocab_size == 0) throw std::invalid_argument("init_model: vocab_size not set");
  if (cfg.heads == 0 || cfg.width % cfg.heads != 0) throw std::invalid_argument("init_model: width must divide into heads");
  Model m{kind, cfg, {}};
  auto& p = m.params;
  for (const auto& t : tower_prefixes(kind)) add_tower_params(p, t, cfg);
  const std::size_t d = cfg.width;
  if (kind == ModelKind::FuseLip) {
    p["head.dense.w"] = Tensor({d, d});
    p["head.dense.b"] = Tensor({d}, 0.0);
    p["head.ln.gamma"] = Tensor({d}, 1.0);
    p["head.ln.beta"] = Tensor({d}, 0.0);
    p["head.bias"] = Tensor({cfg.vocab_size}, 0.0);
  }
  if (kind == ModelKind::DualMLF) {
    p["mlf.slot_emb"] = Tensor({2, d});
    for (std::size_t i = 0; i < cfg.fusion_layers; ++i) add_block_params(p, block_name("mlf", i), d, cfg.mlp_hidden);
    p["mlf.ln_f.gamma"] = Tensor({d}, 1.0);
    p["mlf.ln_f.beta"] = Tensor({d}, 0.0);
    p["mlf.pool.query"] = Tensor({1, d});
    p["mlf.pool.wk"] = Tensor({d, d});
    p["mlf.pool.wv"] = Tensor({d, d});
  }
  p["loss.log_t"] = Tensor::scalar(std::log(10.0));
  p["loss.b"] = Tensor::scalar(10.0);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  for (auto& [name, t] : p) {  // name order keeps init independent of insertion order
    if (is_gaussian_init(name)) {
      for (double& v : t.data()) v = normal(rng);
    }
    t.set_requires_grad(true);
  }
  return m;
}

TowerOutput encode_tower(Graph& g, const ModelConfig& cfg, const std::string& prefix,
                         std::span<const TokenSequence> seqs) {
  if (seqs.empty()) throw std::invalid_argument("encode_tower: empty batch");
  std::size_t T = 0;
  for (const auto& s : seqs) T = std::max(T, s.real_length());
  const std::size_t n = seqs.size();
  std::vector<std::size_t> ids(n * T), pos(n * T), eot_rows(n);
  std::vector<std::uint8_t> mask(n * T);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = seqs[i];
    if (s.ids.size() < T || s.ids.size() > cfg.context) {
      throw std::invalid_argument("encode_tower: sequence length " + std::to_string(s.ids.size()) +
                                  " inconsistent with context " + std::to_string(cfg.context));
    }
    for (std::size_t t = 0; t < T; ++t) {
      ids[i * T + t] = s.ids[t];
      pos[i * T + t] = t;
      mask[i * T + t] = s.attention_mask[t];
    }
    eot_rows[i] = i * T + s.eot_position;
  }
  Var x = nc::add(nc::gather(g.param(prefix + ".tok_emb"), ids), nc::gather(g.param(prefix + ".pos_emb"), pos));
  for (std::size_t l = 0; l < cfg.layers; ++l) x = transformer_block(g, block_name(prefix, l), x, mask, n, T, cfg.heads);
  TowerOutput out;
  out.seq_len = T;
  out.hidden = nc::layer_norm(x, g.param(prefix + ".ln_f.gamma"), g.param(prefix + ".ln_f.beta"));
  out.pooled = nc::gather(out.hidden, eot_rows);
  out.embedding = nc::l2_normalize(out.pooled);
  return out;
}

Var predict_masked(Graph& g, Var hidden, std::span<const std::size_t> rows) {
  Var h = nc::gather(hidden, rows);
  h = nc::gelu(nc::linear(h, g.param("head.dense.w"), g.param("head.dense.b")));
  h = nc::layer_norm(h, g.param("head.ln.gamma"), g.param("head.ln.beta"));
  return nc::add(nc::matmul(h, nc::transpose(g.param("enc.tok_emb"))), g.param("head.bias"));
}

std::vector<double> score_fusion_embed(std::span<const double> img_emb, std::span<const double> txt_emb) {
  if (img_emb.size() != txt_emb.size()) throw std::invalid_argument("score_fusion_embed: dimension mismatch");
  std::vector<double> s(img_emb.size());
  double n2 = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = img_emb[i] + txt_emb[i];
    n2 += s[i] * s[i];
  }
  if (n2 == 0.0) throw std::domain_error("score_fusion_embed: embeddings cancel to zero");
  const double n = std::sqrt(n2);
  for (double& v : s) v /= n;
  return s;
}

Var score_fusion(Var img_emb, Var txt_emb) { return nc::l2_normalize(nc::add(img_emb, txt_emb)); }

Var mlf_embed(Graph& g, const ModelConfig& cfg, Var img_raw, Var txt_raw) {
  const std::size_t n = img_raw.value().rows(), d = cfg.width;
  // interleave to [img_0, txt_0, img_1, txt_1, ...]
  std::vector<std::size_t> order(2 * n), slots(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    order[2 * i] = i;
    order[2 * i + 1] = n + i;
    slots[2 * i] = 0;
    slots[2 * i + 1] = 1;
  }
  Var x = nc::gather(nc::concat({img_raw, txt_raw}, 0), order);
  x = nc::add(x, nc::gather(g.param("mlf.slot_emb"), slots));
  const std::vector<std::uint8_t> mask(2 * n, 1);
  for (std::size_t l = 0; l < cfg.fusion_layers; ++l) x = transformer_block(g, block_name("mlf", l), x, mask, n, 2, cfg.heads);
  x = nc::layer_norm(x, g.param("mlf.ln_f.gamma"), g.param("mlf.ln_f.beta"));
  // attention pooling: one learned query over the two slots
  Var k = nc::matmul(x, g.param("mlf.pool.wk"));
  Var v = nc::matmul(x, g.param("mlf.pool.wv"));
  Var scores = nc::scale(nc::matmul(k, nc::transpose(g.param("mlf.pool.query"))), 1.0 / std::sqrt(double(d)));
  Var w = nc::softmax(nc::reshape(scores, {n, 2}));
  Var v2 = nc::reshape(v, {n, 2 * d});
  Var pooled = nc::add(nc::mul(nc::slice_cols(v2, 0, d), nc::slice_cols(w, 0, 1)),
                       nc::mul(nc::slice_cols(v2, d, 2 * d), nc::slice_cols(w, 1, 2)));
  return nc::l2_normalize(pooled);
}

Var embed_batch(Graph& g, const Model& model, const tok::MultimodalTokenizer& tk, std::span<const MultimodalInput> inputs) {
  const ModelConfig& cfg = model.config;
  if (inputs.empty()) throw std::invalid_argument("embed_batch: empty batch");
  if (model.kind == ModelKind::FuseLip) {
    std::vector<TokenSequence> seqs;
    seqs.reserve(inputs.size());
    for (const auto& in : inputs) seqs.push_back(build_sequence(in, tk, cfg.context));
    return encode_tower(g, cfg, "enc", seqs).embedding;
  }

  // Late fusion: each modality goes through its own tower.
  std::vector<TokenSequence> img_seqs, txt_seqs;
  std::vector<std::size_t> img_row(inputs.size(), SIZE_MAX), txt_row(inputs.size(), SIZE_MAX);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].valid()) throw std::invalid_argument("embed_batch: input has neither image nor text");
    if (inputs[i].image) {
      img_row[i] = img_seqs.size();
      img_seqs.push_back(build_sequence(tk.image(*inputs[i].image), {}, tk.vocab, cfg.context));
    }
    if (inputs[i].text) {
      txt_row[i] = txt_seqs.size();
      txt_seqs.push_back(build_sequence({}, tk.text(*inputs[i].text), tk.vocab, cfg.context));
    }
  }
  const std::size_t ni = img_seqs.size(), nt = txt_seqs.size();
  std::optional<TowerOutput> io, to;
  if (ni) io = encode_tower(g, cfg, "img", img_seqs);
  if (nt) to = encode_tower(g, cfg, "txt", txt_seqs);

  if (model.kind == ModelKind::DualMLF) {
    // rows: [image raw (ni)][text raw (nt)][zero]
    std::vector<Var> parts;
    if (ni) parts.push_back(io->pooled);
    if (nt) parts.push_back(to->pooled);
    parts.push_back(g.constant(Tensor({1, cfg.width}, 0.0)));
    Var table = nc::concat(parts, 0);
    const std::size_t zero = ni + nt;
    std::vector<std::size_t> ii(inputs.size()), ti(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      ii[i] = img_row[i] == SIZE_MAX ? zero : img_row[i];
      ti[i] = txt_row[i] == SIZE_MAX ? zero : ni + txt_row[i];
    }
    return mlf_embed(g, cfg, nc::gather(table, ii), nc::gather(table, ti));
  }

  // Score fusion. Rows: [image emb (ni)][text emb (nt)][fused (nb)]
  std::vector<std::size_t> both_i, both_t;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (img_row[i] != SIZE_MAX && txt_row[i] != SIZE_MAX) {
      both_i.push_back(img_row[i]);
      both_t.push_back(txt_row[i]);
    }
  }
  std::vector<Var> parts;
  if (ni) parts.push_back(io->embedding);
  if (nt) parts.push_back(to->embedding);
  if (!both_i.empty()) parts.push_back(score_fusion(nc::gather(io->embedding, both_i), nc::gather(to->embedding, both_t)));
  Var table = nc::concat(parts, 0);
  std::vector<std::size_t> rows(inputs.size());
  std::size_t fused = ni + nt;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (img_row[i] != SIZE_MAX && txt_row[i] != SIZE_MAX) {
      rows[i] = fused++;
    } else if (img_row[i] != SIZE_MAX) {
      rows[i] = img_row[i];
    } else {
      rows[i] = ni + txt_row[i];
    }
  }
  return nc::gather(table, rows);
}

std::vector<std::vector<double>> embed(const Model& model, const tok::MultimodalTokenizer& tk,
                                       std::span<const MultimodalInput> inputs, std::size_t chunk) {
  // a gradient-free copy so the graph records no backward closures
  nc::ParamMap frozen = model.params;
  for (auto& [name, t] : frozen) t.set_requires_grad(false);
  std::vector<std::vector<double>> out;
  out.reserve(inputs.size());
  for (std::size_t start = 0; start < inputs.size(); start += chunk) {
    const std::size_t end = std::min(inputs.size(), start + chunk);
    Graph g(&frozen);
    const Tensor& e = embed_batch(g, model, tk, inputs.subspan(start, end - start)).value();
    for (std::size_t r = 0; r < e.rows(); ++r) {
      out.emplace_back(e.data().begin() + r * e.cols(), e.data().begin() + (r + 1) * e.cols());
    }
  }
  return out;
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  const ModelConfig& c = model.config;
  io::write_bytes(os, "FLIP1");
  for (std::size_t v : {c.layers, c.width, c.heads, c.context, c.vocab_size}) io::write_u32(os, static_cast<std::uint32_t>(v));
  io::write_u32(os, static_cast<std::uint32_t>(model.params.size()));
  for (const auto& [name, t] : model.params) {  // std::map: sorted by name
    io::write_u32(os, static_cast<std::uint32_t>(name.size()));
    io::write_bytes(os, name);
    io::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) io::write_u32(os, static_cast<std::uint32_t>(dim));
    for (double v : t.data()) io::write_f64(os, v);
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  io::expect_magic(is, "FLIP1", path);
  Model m;
  ModelConfig& c = m.config;
  c.layers = io::read_u32(is, "layers");
  c.width = io::read_u32(is, "width");
  c.heads = io::read_u32(is, "heads");
  c.context = io::read_u32(is, "context");
  c.vocab_size = io::read_u32(is, "vocab size");
  const std::uint32_t count = io::read_u32(is, "parameter count");
  if (count > 100000) throw io::FormatError("implausible parameter count in " + path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = io::read_u32(is, "parameter name length");
    if (len == 0 || len > 4096) throw io::FormatError("implausible parameter name length in " + path);
    std::string name(len, '\0');
    io::read_exact(is, name.data(), len, "parameter name");
    const std::uint32_t rank = io::read_u32(is, "parameter rank");
    if (rank == 0 || rank > 8) throw io::FormatError("implausible rank for '" + name + "' in " + path);
    nc::Shape shape(rank);
    std::size_t numel = 1;
    for (auto& dim : shape) {
      dim = io::read_u32(is, "parameter shape");
      numel *= dim;
    }
    if (numel > (std::size_t{1} << 28)) throw io::FormatError("implausible size for '" + name + "' in " + path);
    std::vector<double> data(numel);
    const std::string what = "parameter '" + name + "'";
    io::read_exact(is, data.data(), numel * sizeof(double), what.c_str());
    Tensor t(shape, std::move(data));
    t.set_requires_grad(true);
    m.params.emplace(std::move(name), std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw io::FormatError("trailing bytes in checkpoint " + path);

  // kind and derived sizes follow from which parameters are present
  if (has_param(m.params, "enc.tok_emb")) {
    m.kind = ModelKind::FuseLip;
  } else if (has_param(m.params, "mlf.slot_emb")) {
    m.kind = ModelKind::DualMLF;
  } else if (has_param(m.params, "img.tok_emb")) {
    m.kind = ModelKind::DualSF;
  } else {
    throw io::FormatError("checkpoint " + path + " holds no known tower");
  }
  const std::string first = tower_prefixes(m.kind).front();
  const auto w1 = m.params.find(block_name(first, 0) + ".mlp.w1");
  if (w1 == m.params.end()) throw io::FormatError("checkpoint " + path + " has no transformer blocks");
  c.mlp_hidden = w1->second.shape().back();
  c.fusion_layers = 0;
  while (has_param(m.params, block_name("mlf", c.fusion_layers) + ".mlp.w1")) ++c.fusion_layers;
  if (c.fusion_layers == 0) c.fusion_layers = ModelConfig{}.fusion_layers;

  const Model fresh = init_model(m.kind, c, 0);
  for (const auto& [name, t] : fresh.params) {
    auto it = m.params.find(name);
    if (it == m.params.end()) throw io::FormatError("checkpoint " + path + " is missing parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw io::FormatError("checkpoint " + path + ": parameter '" + name + "' has shape " +
                            nc::shape_str(it->second.shape()) + ", expected " + nc::shape_str(t.shape()));
    }
  }
  if (fresh.params.size() != m.params.size()) throw io::FormatError("checkpoint " + path + " has unexpected parameters");
  return m;
}

}  // namespace efuse::enc
