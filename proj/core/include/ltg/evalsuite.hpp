#pragma once

// Answer metrics: edit distance, ANLS, soft-vote accuracy, and run reports.
// Definitions: docs/method_map.md#metrics.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltg/dataworld.hpp"

namespace ltg {

std::size_t levenshtein(std::string_view a, std::string_view b);

/// Lowercase, punctuation removed, articles (a, an, the) dropped, single spaces.
std::string normalize_answer(std::string_view s);

/// 1 - lev / max(|pred|, |gold|) on normalized strings (1 when both empty).
double normalized_similarity(std::string_view pred, std::string_view gold);

/// Max similarity over golds, truncated to 0 below `threshold`.
double anls(std::string_view pred, const std::vector<std::string>& golds, double threshold = 0.5);

/// min(#matching golds / 3, 1); exactly ten golds required.
double vqa_accuracy(std::string_view pred, const std::vector<std::string>& golds);

/// Whole-answer exact match against the canonical answer after normalization.
bool exact_match(std::string_view pred, const SceneInstance& scene);

struct PredictionRecord {
  std::string instance_id;
  std::string predicted_answer;
  std::vector<double> p_w;
  BBox b_p;
  double p_s = 0.0;
  std::vector<std::pair<int, std::string>> selected;
};

nlohmann::json to_json(const PredictionRecord& r);
PredictionRecord prediction_from_json(const nlohmann::json& j);
void save_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& recs);
std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);

inline constexpr int kReportSchemaVersion = 1;

struct MetricSummary {
  double accuracy = 0.0;
  double anls = 0.0;
  double exact_match = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  MetricSummary overall;
  std::map<std::string, MetricSummary> per_template;
};

/// Every dataset id must appear exactly once among the predictions.
EvalReport evaluate_run(const std::vector<PredictionRecord>& predictions,
                        const std::vector<SceneInstance>& dataset, double anls_threshold = 0.5);

nlohmann::json to_json(const EvalReport& r);
std::string format_table(const EvalReport& r);

}  // namespace ltg
