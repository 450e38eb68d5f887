#pragma once

// Trainable stand-ins for the pretrained backbones.
//
// TextLayoutEncoder: two parallel self-attention stacks, one over word-piece
// embeddings and one over box embeddings, that share attention scores in each
// layer. Scene tokens carry no sequence-position embedding, so the encoder is
// equivariant to permutations of the OCR list.
//
// VisualEncoder: the attribute grid goes through a strided patch projection,
// gets 2-D sinusoidal position embeddings, is concatenated with the embedded
// question, and feeds an encoder-decoder with learned object queries plus a
// prepended CLS query.

#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltg/autograd.hpp"
#include "ltg/dataworld.hpp"
#include "ltg/vocab.hpp"

namespace ltg {

struct ModelConfig {
  int dim = 64;
  int heads = 4;
  int layers = 2;
  int ffn_hidden = 128;
  int queries = 8;
  int grid_size = 16;
  int cell_features = kCellFeatures;
  int patch = 2;            // grid cells per side merged into one visual token
  int max_question_len = 24;
  int max_scene_tokens = 48;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
/// Throws std::invalid_argument on inconsistent shapes.
void validate(const ModelConfig& c);

struct TextLayoutEncoding {
  nn::Var h_lang;  // m x d, scene-token rows only
  nn::Var h_lay;   // m x d
  nn::Var h_cls;   // 1 x d
};

struct VisualEncoding {
  nn::Var h_v;    // q x d
  nn::Var h_cls;  // 1 x d
};

class SequenceTooLong : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Piece groups (one per word) for embedding lookup.
std::vector<std::vector<int>> piece_groups(const Vocabulary& vocab,
                                           const std::vector<std::string>& words);

class TextLayoutEncoder {
 public:
  TextLayoutEncoder() = default;
  TextLayoutEncoder(nn::ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng);

  TextLayoutEncoding encode(nn::Graph& g, nn::ParamStore& ps,
                            const std::vector<std::string>& question,
                            const std::vector<SceneTextToken>& tokens) const;

 private:
  struct Layer {
    nn::Attention lang_att, lay_att;
    nn::LayerNorm lang_ln1, lay_ln1;
    nn::FeedForward lang_ff, lay_ff;
    nn::LayerNorm lang_ln2, lay_ln2;
  };
  ModelConfig cfg_;
  nn::Linear box_proj_;
  std::vector<Layer> layers_;
};

class VisualEncoder {
 public:
  VisualEncoder() = default;
  VisualEncoder(nn::ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng);

  VisualEncoding encode(nn::Graph& g, nn::ParamStore& ps,
                        const std::vector<std::string>& question,
                        const VisualGrid& grid) const;

  /// Flattened patch features (patches x patch*patch*F), row-major patches.
  nn::Mat patchify(const VisualGrid& grid) const;

 private:
  ModelConfig cfg_;
  nn::Linear patch_proj_;
  std::vector<nn::EncoderLayer> enc_;
  std::vector<nn::DecoderLayer> dec_;
  nn::Mat pos2d_;  // patches x d
};

}  // namespace ltg
