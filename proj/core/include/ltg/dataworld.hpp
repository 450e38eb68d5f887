#pragma once

// Synthetic scene-text world: generation, OCR corruption, and persistence.
//
// A scene is a unit square holding non-overlapping text tokens. The image is
// represented as a G x G grid of attribute one-hot cells, so the visual stream
// knows colors, categories, font sizes and positions but never the words; the
// OCR stream knows words and boxes but never colors.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltg/geometry.hpp"
#include "ltg/lexicon.hpp"

namespace ltg {

struct TokenAttributes {
  Color color = Color::Red;
  Category category = Category::Word;
  FontSize font_size = FontSize::Small;

  bool operator==(const TokenAttributes&) const = default;
};

struct SceneTextToken {
  std::string word;
  BBox box;
  TokenAttributes attributes;

  bool operator==(const SceneTextToken&) const = default;
};

/// G x G x F cell features, row-major over (row, col, feature).
struct VisualGrid {
  int size = 0;
  int features = 0;
  std::vector<double> values;

  double at(int row, int col, int f) const {
    return values[(static_cast<std::size_t>(row) * size + col) * features + f];
  }
  double& at(int row, int col, int f) {
    return values[(static_cast<std::size_t>(row) * size + col) * features + f];
  }
  bool operator==(const VisualGrid&) const = default;
};

struct SceneInstance {
  std::string id;
  std::string template_name;
  std::vector<std::string> question;
  std::vector<SceneTextToken> tokens;
  VisualGrid visual_grid;
  std::vector<std::string> answers;        // 10 gold answers
  std::vector<std::string> answer_tokens;  // canonical answer words
  int anchor = -1;  // token the question is about; -1 when dropped

  bool operator==(const SceneInstance&) const = default;
};

enum class QuestionTemplate { ColorCategory, Position, ColorWords, SizeCategory, Count };

std::string_view to_string(QuestionTemplate t);
QuestionTemplate parse_template(std::string_view s);
/// Templates whose answer is copied from scene text.
bool requires_copy(QuestionTemplate t);

struct WorldConfig {
  int n_train = 2000;
  int n_test = 500;
  int grid_size = 16;
  int min_tokens = 6;
  int max_tokens = 10;
  double ambiguity_fraction = 0.5;
  std::vector<QuestionTemplate> templates = {
      QuestionTemplate::ColorCategory, QuestionTemplate::Position,
      QuestionTemplate::ColorWords, QuestionTemplate::SizeCategory,
      QuestionTemplate::Count};
  std::vector<double> template_weights = {0.3, 0.2, 0.2, 0.2, 0.1};
  int max_attempts = 400;

  bool operator==(const WorldConfig&) const = default;
};

nlohmann::json to_json(const WorldConfig& c);
WorldConfig world_config_from_json(const nlohmann::json& j);

struct Dataset {
  WorldConfig config;
  std::uint64_t seed = 0;
  std::vector<SceneInstance> train;
  std::vector<SceneInstance> test;
};

/// Raised when a configuration cannot be satisfied.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic in (config, seed). Each instance draws from its own sub-seed.
Dataset generate_dataset(const WorldConfig& config, std::uint64_t seed);

/// Generates one instance; exposed for tests and benchmarks.
SceneInstance generate_instance(const WorldConfig& config, std::uint64_t seed,
                                const std::string& id);

/// Rebuilds the grid from token attributes.
VisualGrid render_grid(const std::vector<SceneTextToken>& tokens, int grid_size);

/// Attribute one-hots recovered from one cell, or nullopt if unoccupied.
std::optional<TokenAttributes> decode_cell(const VisualGrid& grid, int row, int col);

/// Index order of tokens sorted top-to-bottom then left-to-right.
std::vector<int> reading_order(const std::vector<SceneTextToken>& tokens);

/// Label-preserving training augmentation. Every scene word is replaced by a
/// fresh word of the same category and length (answers follow), and colors
/// are permuted consistently across tokens, grid and question. Geometry,
/// token order and the anchor are unchanged.
SceneInstance augment_scene(const SceneInstance& scene, std::uint64_t seed);

// ---------------------------------------------------------------------------
// OCR corruption

enum class CorruptionScope { AllTokens, AnswerTokens };

struct CorruptionSpec {
  double char_sub_rate = 0.0;
  double word_drop_rate = 0.0;
  std::uint64_t seed = 0;
  CorruptionScope scope = CorruptionScope::AllTokens;
};

/// Validates rates; throws std::invalid_argument.
void validate(const CorruptionSpec& spec);

/// Pure in (scene, spec): the image and gold answers are left untouched.
SceneInstance corrupt_ocr(const SceneInstance& scene, const CorruptionSpec& spec);

/// Substitutes each character with probability `rate`; letters stay letters
/// and digits stay digits, and a substituted character always changes.
std::string corrupt_word(const std::string& word, double rate, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Persistence

inline constexpr int kDatasetSchemaVersion = 1;

class DatasetFormatError : public std::runtime_error {
 public:
  DatasetFormatError(const std::string& path, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

nlohmann::json to_json(const SceneInstance& s);
SceneInstance scene_from_json(const nlohmann::json& j);

struct SplitFile {
  WorldConfig config;
  std::uint64_t seed = 0;
  std::string split;
  std::vector<SceneInstance> instances;
};

void save_split(const std::filesystem::path& path, const WorldConfig& config,
                std::uint64_t seed, const std::string& split,
                const std::vector<SceneInstance>& instances);
SplitFile load_split(const std::filesystem::path& path);

/// Writes `train.jsonl` and `test.jsonl` into `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ltg
