#pragma once

// Closed vocabularies of the synthetic scene-text world.

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace ltg {

enum class Color { Red, Green, Blue, Yellow, White, Black, Orange, Purple };
enum class Category { Number, Word };
enum class FontSize { Small, Large };

inline constexpr int kNumColors = 8;
inline constexpr int kNumCategories = 2;
inline constexpr int kNumSizes = 2;
/// color one-hot + category one-hot + size one-hot + occupancy.
inline constexpr int kCellFeatures = kNumColors + kNumCategories + kNumSizes + 1;

std::string_view to_string(Color c);
std::string_view to_string(Category c);
std::string_view to_string(FontSize s);
Color parse_color(std::string_view s);
Category parse_category(std::string_view s);
FontSize parse_font_size(std::string_view s);

/// The 200 scene words that word-category tokens are drawn from.
const std::vector<std::string>& scene_words();

/// Every word that can appear in a generated question or a non-copy answer.
const std::vector<std::string>& template_words();

/// 3x3 reading-layout regions, row-major from top-left.
const std::array<std::vector<std::string>, 9>& position_phrases();

/// "one" .. "ten".
const std::array<std::string, 10>& count_words();

}  // namespace ltg
