#pragma once

// Answer-location targets: exact word matching, the answer-region box and
// per-token selection tags. See docs/method_map.md#answer-region-targets.

#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ltg/dataworld.hpp"
#include "ltg/geometry.hpp"

namespace ltg {

struct AlmTargets {
  BBox answer_box;            // zero box when nothing matched
  std::vector<double> tags;   // 1.0 for matched tokens, else 0.0
  std::set<int> matched;
};

/// Lowercases and strips leading/trailing punctuation.
std::string normalize_word(std::string_view w);

/// Tags every token whose normalized word equals a normalized answer word
/// (all occurrences, no contiguity requirement).
AlmTargets build_targets(const std::vector<std::string>& answer,
                         const std::vector<SceneTextToken>& tokens);

}  // namespace ltg
