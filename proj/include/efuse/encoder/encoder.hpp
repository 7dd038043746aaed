#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "efuse/data.hpp"
#include "efuse/numcore/graph.hpp"
#include "efuse/tokenizer/tokenizer.hpp"

namespace efuse::enc {

using tok::TokenId;

/// Token ids with their attention mask. Layout:
/// [image tokens][<bot>][text tokens][<eot>][<pad>...]
struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> attention_mask;  // 1 = real token
  std::size_t eot_position = 0;

  std::size_t real_length() const { return eot_position + 1; }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Thrown when an input does not fit the context window.
class SequenceOverflow : public std::length_error {
 public:
  using std::length_error::length_error;
};

TokenSequence build_sequence(const MultimodalInput& input, const tok::MultimodalTokenizer& tk, std::size_t context);
/// Same layout from already tokenized pieces (either may be empty, not both).
TokenSequence build_sequence(std::span<const TokenId> image_tokens, std::span<const TokenId> text_tokens,
                             const tok::UnifiedVocab& vocab, std::size_t context);

enum class ModelKind { FuseLip, DualSF, DualMLF };

std::string_view model_kind_name(ModelKind k);
ModelKind parse_model_kind(std::string_view name);

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t context = 96;
  std::size_t vocab_size = 0;
  std::size_t mlp_hidden = 256;
  std::size_t fusion_layers = 2;  // MLF only

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Parameters of one model, named by role:
///   enc.* (fused encoder), head.* (masked-token head), img.* / txt.* (towers),
///   mlf.* (fusion module), loss.log_t / loss.b (contrastive temperature, bias).
struct Model {
  ModelKind kind = ModelKind::FuseLip;
  ModelConfig config;
  nc::ParamMap params;
};

/// Weights ~ N(0, 0.02), biases zero, layer-norm gains one, log t = log 10,
/// b = 10. Every tensor has requires_grad set.
Model init_model(ModelKind kind, const ModelConfig& cfg, std::uint64_t seed);

/// Tower prefixes in use by a model kind.
std::vector<std::string> tower_prefixes(ModelKind kind);

struct TowerOutput {
  nc::Var hidden;    // [N * seq_len, d], final layer norm applied
  nc::Var pooled;    // [N, d] hidden state at each <eot>, not normalized
  nc::Var embedding; // [N, d] pooled, L2-normalized
  std::size_t seq_len = 0;
};

/// Runs one transformer tower over a batch. Padding beyond the longest real
/// sequence is dropped before any compute; pad keys are masked either way.
TowerOutput encode_tower(nc::Graph& g, const ModelConfig& cfg, const std::string& prefix,
                         std::span<const TokenSequence> seqs);

/// Masked-token head applied to selected rows of `hidden`.
/// logits = LN(GELU(h W + c)) E^T + bias, with E = enc.tok_emb.
nc::Var predict_masked(nc::Graph& g, nc::Var hidden, std::span<const std::size_t> rows);

/// normalize(img + txt). Both inputs must be unit norm; a zero sum is an error.
std::vector<double> score_fusion_embed(std::span<const double> img_emb, std::span<const double> txt_emb);
nc::Var score_fusion(nc::Var img_emb, nc::Var txt_emb);

/// MLF fusion over [N, d] raw image and text tower outputs (zero rows for a
/// missing modality). Returns L2-normalized [N, d].
nc::Var mlf_embed(nc::Graph& g, const ModelConfig& cfg, nc::Var img_raw, nc::Var txt_raw);

/// Unit-norm embeddings [N, d] of arbitrary inputs through the model's
/// multimodal path (fused encoder, SF or MLF).
nc::Var embed_batch(nc::Graph& g, const Model& model, const tok::MultimodalTokenizer& tk,
                    std::span<const MultimodalInput> inputs);

/// Inference helper: embeds in chunks, returns one row per input.
std::vector<std::vector<double>> embed(const Model& model, const tok::MultimodalTokenizer& tk,
                                       std::span<const MultimodalInput> inputs, std::size_t chunk = 128);

/// "FLIP1", config (L, d, heads, context, |V| as LE u32), parameter count,
/// then per parameter: name length, name, rank, dims, LE f64 values. Sorted by name.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace efuse::enc
