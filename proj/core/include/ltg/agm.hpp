#pragma once

// Answer generation: a small encoder-decoder that reads
// [question ; SEP ; selected words ; SEP ; scene words] and emits the answer
// piece by piece over the full world vocabulary, so it can produce words that
// are missing or misspelled in the OCR list.
// See docs/method_map.md#answer-generation.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltg/autograd.hpp"
#include "ltg/dataworld.hpp"
#include "ltg/vocab.hpp"

namespace ltg {

struct AgmConfig {
  int dim = 64;
  int heads = 4;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int ffn_hidden = 128;
  int max_input_len = 96;
  int max_decode_len = 12;

  bool operator==(const AgmConfig&) const = default;
};

nlohmann::json to_json(const AgmConfig& c);
AgmConfig agm_config_from_json(const nlohmann::json& j);
void validate(const AgmConfig& c);

enum class Segment : int { Question = 0, Selected = 1, Scene = 2 };

struct GenInput {
  std::vector<int> ids;
  std::vector<int> segments;
  int truncated_words = 0;  // scene words dropped to fit max_input_len
};

struct GenBatch {
  GenInput input;
  std::vector<int> target;  // answer pieces + EOS
};

/// Scene words go in reading order. Over-long inputs lose scene words from
/// the tail; the question and the selection are never cut.
GenInput build_gen_input(const std::vector<std::string>& question,
                         const std::vector<std::string>& selected,
                         const std::vector<SceneTextToken>& tokens, int max_len);

std::vector<int> build_gen_target(const std::vector<std::string>& answer);

struct DecodeConfig {
  int beam_size = 1;  // 1 = greedy
  int max_len = 12;

  bool operator==(const DecodeConfig&) const = default;
};

class AgmModel {
 public:
  AgmModel(const AgmConfig& cfg, std::uint64_t seed);

  const AgmConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Teacher-forced sum of -log P(target_i | input, target_<i).
  nn::Var loss(nn::Graph& g, const GenBatch& batch);
  double accumulate(const GenBatch& batch);
  double loss_value(const GenBatch& batch);

  /// Decoded piece ids (without EOS).
  std::vector<int> decode(const GenInput& input, const DecodeConfig& cfg);
  std::vector<std::string> generate(const GenInput& input, const DecodeConfig& cfg);

 private:
  nn::Var encode(nn::Graph& g, const GenInput& input);
  /// Logits for every prefix position, rows = prefix length.
  nn::Var decode_logits(nn::Graph& g, nn::Var memory, const std::vector<int>& prefix);

  AgmConfig cfg_;
  nn::ParamStore params_;
  std::vector<nn::EncoderLayer> enc_;
  std::vector<nn::DecoderLayer> dec_;
  nn::Linear out_;
};

}  // namespace ltg
