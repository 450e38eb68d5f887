#pragma once

// Staged training (locator, then generator), prediction, the four-variant
// selection ablation, gradient checks, and the small amount of I/O the CLI
// needs: configs, logs, locks and raster plots.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltg/agm.hpp"
#include "ltg/alm.hpp"
#include "ltg/dataworld.hpp"
#include "ltg/evalsuite.hpp"
#include "ltg/optimizer.hpp"

namespace ltg {

struct AlmTrainConfig {
  int epochs = 12;
  int batch_size = 16;
  double val_fraction = 0.1;
  long max_steps = 0;  // 0 = run all epochs
  OptimizerConfig optimizer;
  /// Probability of showing an instance through augment_scene.
  double augment_prob = 0.5;

  bool operator==(const AlmTrainConfig&) const = default;
};

struct AgmTrainConfig {
  int epochs = 32;
  int batch_size = 16;
  double val_fraction = 0.1;
  long max_steps = 0;
  OptimizerConfig optimizer;
  /// Selection fed to the generator while training; None trains a generator
  /// that never sees a selection.
  SelectionSource selection = SelectionSource::Mixed;
  /// Fraction of epochs that use perturbed gold selections before switching
  /// to the locator's own predictions.
  double gold_fraction = 0.5;
  double gold_drop_rate = 0.2;
  double distractor_rate = 0.1;
  /// Share of training instances shown with corrupted answer tokens.
  double augment_fraction = 0.5;
  double augment_char_sub_rate = 0.2;
  /// Probability of showing an instance through augment_scene.
  double augment_prob = 0.5;
  /// Extra spelling examples per batch: a scene word corrupted at
  /// augment_char_sub_rate as the selection, the clean word as the target.
  /// Skipped when the training selection is None.
  int lexicon_examples = 16;

  bool operator==(const AgmTrainConfig&) const = default;
};

struct PipelineConfig {
  ModelConfig model;
  AlmLossConfig alm_loss;
  AgmConfig agm;
  AlmTrainConfig alm_train;
  AgmTrainConfig agm_train;
  DecodeConfig decode;
  double anls_threshold = 0.5;

  bool operator==(const PipelineConfig&) const = default;
};

nlohmann::json to_json(const AlmTrainConfig& c);
nlohmann::json to_json(const AgmTrainConfig& c);
nlohmann::json to_json(const PipelineConfig& c);
AlmTrainConfig alm_train_config_from_json(const nlohmann::json& j);
AgmTrainConfig agm_train_config_from_json(const nlohmann::json& j);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value" overrides to a JSON object; values parse as JSON
/// when possible and fall back to strings.
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides);

// ---------------------------------------------------------------------------
// Filesystem helpers

/// Relative paths resolve under $LTG_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::filesystem::path& p);

class LockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exclusive `.lock` file in a directory for the lifetime of the object.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path path_;
};

void append_jsonl(const std::filesystem::path& path, const nlohmann::json& record);

// ---------------------------------------------------------------------------
// Training

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AlmEpochRecord {
  int epoch = 0;
  long steps = 0;
  double lr = 0.0;
  double loss = 0.0;
  double loss_bbox = 0.0;
  double loss_s = 0.0;
  double val_selection_f1 = 0.0;
  double val_mean_iou = 0.0;
};

struct AgmEpochRecord {
  int epoch = 0;
  long steps = 0;
  double lr = 0.0;
  double loss = 0.0;
  bool gold_selection = true;
  double val_exact_match = 0.0;
};

nlohmann::json to_json(const AlmEpochRecord& r);
nlohmann::json to_json(const AgmEpochRecord& r);

struct AlmTrainResult {
  std::unique_ptr<AlmModel> model;
  std::vector<AlmEpochRecord> log;
  int best_epoch = 0;
};

struct AgmTrainResult {
  std::unique_ptr<AgmModel> model;
  std::vector<AgmEpochRecord> log;
  int best_epoch = 0;
};

/// Trains the locator on `train`, holding out its tail for validation. With
/// `out_dir`, writes log.jsonl and alm.ckpt there under a lock; on divergence
/// the last good parameters are saved before TrainingDiverged is thrown.
AlmTrainResult train_alm(const std::vector<SceneInstance>& train, const PipelineConfig& cfg,
                         std::uint64_t seed,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Trains the generator. `alm` is required unless the training selection is
/// None. Same output conventions as train_alm (agm.ckpt).
AgmTrainResult train_agm(const std::vector<SceneInstance>& train, AlmModel* alm,
                         const PipelineConfig& cfg, std::uint64_t seed,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Mean per-instance selection F1 and mean IoU(b_p, b_a), over instances whose
/// answer matches at least one token.
struct LocatorScore {
  double selection_f1 = 0.0;
  double mean_iou = 0.0;
};
LocatorScore score_locator(AlmModel& alm, const std::vector<SceneInstance>& scenes);

// Checkpoints

void save_alm(const std::filesystem::path& path, const AlmModel& m);
std::unique_ptr<AlmModel> load_alm(const std::filesystem::path& path);
void save_agm(const std::filesystem::path& path, const AgmModel& m, SelectionSource trained_on);
std::unique_ptr<AgmModel> load_agm(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Prediction and evaluation

/// Locator then generator. `alm` may be null only for SelectionSource::None.
std::vector<PredictionRecord> predict(const std::vector<SceneInstance>& scenes, AlmModel* alm,
                                      AgmModel& agm, SelectionSource source,
                                      const PipelineConfig& cfg);

/// Emits the selected tokens verbatim, joined by spaces.
std::vector<PredictionRecord> predict_copy(const std::vector<SceneInstance>& scenes,
                                           AlmModel& alm, SelectionSource source,
                                           const PipelineConfig& cfg);

/// Corrupts the answer-token characters of every scene at `char_sub_rate`.
std::vector<SceneInstance> corrupt_answer_tokens(const std::vector<SceneInstance>& scenes,
                                                 double char_sub_rate, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Ablation

inline const std::vector<SelectionSource> kAblationVariants = {
    SelectionSource::None, SelectionSource::Visual, SelectionSource::Linguistic,
    SelectionSource::Mixed};

std::string variant_label(SelectionSource s);  // None, V, L, V+L

struct AblationOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  /// When > 0, also compares generator and copy-only exact match on a test
  /// split whose answer tokens are corrupted at this rate.
  double denoise_char_sub_rate = 0.0;
  std::optional<std::filesystem::path> out_dir;
  bool verbose = false;
};

struct AblationSeedRecord {
  std::uint64_t seed = 0;
  std::map<std::string, EvalReport> reports;  // keyed by variant label
  double denoise_generator_em = 0.0;
  double denoise_copy_em = 0.0;
};

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

struct AblationResult {
  std::vector<AblationSeedRecord> per_seed;
  std::map<std::string, MeanSd> accuracy;  // keyed by variant label
  MeanSd denoise_generator_em;
  MeanSd denoise_copy_em;
};

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
MeanSd mean_sd(const std::vector<double>& xs);

/// Requires at least three seeds. For each seed: trains the locator, one
/// generator on the exposure schedule (shared by V, L and V+L) and one
/// generator without selections (None), then evaluates all four on the test
/// split.
AblationResult run_ablation(const Dataset& data, const PipelineConfig& cfg,
                            const AblationOptions& opts);

nlohmann::json to_json(const AblationResult& r);
std::string format_ablation_table(const AblationResult& r);

// ---------------------------------------------------------------------------
// Gradient checks

struct GradCheckResult {
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradCheckFloor = 1e-3;

/// Central differences on the locator loss over random parameter coordinates.
GradCheckResult gradcheck_alm(std::uint64_t seed, std::size_t coordinates, double eps);
/// Same on the generator loss.
GradCheckResult gradcheck_agm(std::uint64_t seed, std::size_t coordinates, double eps);

// ---------------------------------------------------------------------------
// Plots (binary PPM)

/// Draws one polyline per series, each scaled to the shared y range.
void write_line_plot(const std::filesystem::path& path,
                     const std::vector<std::vector<double>>& series, int width = 480,
                     int height = 320);
/// Bars with optional error whiskers; values are assumed in [0, 1].
void write_bar_chart(const std::filesystem::path& path, const std::vector<double>& values,
                     const std::vector<double>& errors, int width = 480, int height = 320);

}  // namespace ltg
