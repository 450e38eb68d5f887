#include "ltg/lexicon.hpp"

#include <stdexcept>

namespace ltg {

namespace {
constexpr std::array<std::string_view, kNumColors> kColorNames = {
    "red", "green", "blue", "yellow", "white", "black", "orange", "purple"};
}

std::string_view to_string(Color c) { return kColorNames[static_cast<int>(c)]; }

std::string_view to_string(Category c) {
  return c == Category::Number ? "number" : "word";
}

std::string_view to_string(FontSize s) {
  return s == FontSize::Small ? "small" : "large";
}

Color parse_color(std::string_view s) {
  for (int i = 0; i < kNumColors; ++i)
    if (kColorNames[i] == s) return static_cast<Color>(i);
  throw std::invalid_argument("unknown color: " + std::string(s));
}

Category parse_category(std::string_view s) {
  if (s == "number") return Category::Number;
  if (s == "word") return Category::Word;
  throw std::invalid_argument("unknown category: " + std::string(s));
}

FontSize parse_font_size(std::string_view s) {
  if (s == "small") return FontSize::Small;
  if (s == "large") return FontSize::Large;
  throw std::invalid_argument("unknown font size: " + std::string(s));
}

const std::vector<std::string>& scene_words() {
  static const std::vector<std::string> words = {
      "united", "states", "america", "river", "garden", "market", "bridge",
      "station", "coffee", "bakery", "hotel", "school", "church", "museum",
      "library", "theater", "cinema", "pharmacy", "bank", "office", "street",
      "avenue", "road", "park", "square", "plaza", "tower", "castle", "harbor",
      "island", "mountain", "valley", "forest", "desert", "ocean", "beach",
      "lake", "village", "city", "north", "south", "east", "west", "central",
      "royal", "golden", "silver", "happy", "lucky", "sunny", "quiet", "grand",
      "little", "modern", "classic", "fresh", "sweet", "spicy", "pizza",
      "burger", "noodle", "salad", "bread", "cheese", "butter", "honey",
      "cookie", "donut", "sandwich", "taco", "sushi", "soup", "tea", "juice",
      "water", "milk", "open", "closed", "sale", "exit", "entrance", "stop",
      "parking", "police", "fire", "hospital", "airport", "taxi", "metro",
      "train", "ticket", "gate", "platform", "welcome", "thanks", "please",
      "hello", "goodbye", "love", "peace", "hope", "dream", "star", "moon",
      "sun", "cloud", "rain", "snow", "wind", "storm", "apple", "banana",
      "cherry", "grape", "lemon", "mango", "melon", "peach", "pear", "plum",
      "berry", "tomato", "potato", "onion", "pepper", "dog", "cat", "horse",
      "bird", "fish", "lion", "tiger", "bear", "wolf", "fox", "eagle", "shark",
      "whale", "rabbit", "mouse", "monkey", "king", "queen", "prince",
      "knight", "doctor", "teacher", "chef", "baker", "farmer", "pilot",
      "sailor", "artist", "phone", "radio", "camera", "guitar", "piano",
      "violin", "drum", "bicycle", "motor", "rocket", "robot", "laptop",
      "free", "best", "super", "mega", "ultra", "extra", "special", "premium",
      "express", "house", "home", "shop", "store", "mall", "club", "cafe",
      "bar", "restaurant", "kitchen", "fashion", "beauty", "sport", "fitness",
      "yoga", "dance", "music", "art", "photo", "video", "game", "book",
      "news", "boston", "london", "paris",
  };
  return words;
}

const std::array<std::vector<std::string>, 9>& position_phrases() {
  static const std::array<std::vector<std::string>, 9> phrases = {{
      {"top", "left"},
      {"top"},
      {"top", "right"},
      {"left"},
      {"center"},
      {"right"},
      {"bottom", "left"},
      {"bottom"},
      {"bottom", "right"},
  }};
  return phrases;
}

const std::array<std::string, 10>& count_words() {
  static const std::array<std::string, 10> words = {
      "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"};
  return words;
}

const std::vector<std::string>& template_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> w = {"what", "is",  "the",   "in",      "written",
                                  "at",   "are", "words", "how",     "many",
                                  "numbers", "there", "?", "number", "word",
                                  "small", "large", "top", "bottom", "left",
                                  "right", "center"};
    for (auto c : kColorNames) w.emplace_back(c);
    for (const auto& c : count_words()) w.push_back(c);
    return w;
  }();
  return words;
}

}  // namespace ltg
