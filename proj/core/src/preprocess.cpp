#include "ltg/preprocess.hpp"

#include <algorithm>
#include <cctype>

namespace ltg {

std::string normalize_word(std::string_view w) {
  std::size_t b = 0;
  std::size_t e = w.size();
  auto punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
  while (b < e && punct(w[b])) ++b;
  while (e > b && punct(w[e - 1])) --e;
  std::string out(w.substr(b, e - b));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

AlmTargets build_targets(const std::vector<std::string>& answer,
                         const std::vector<SceneTextToken>& tokens) {
  std::set<std::string> wanted;
  for (const auto& a : answer) {
    std::string n = normalize_word(a);
    if (!n.empty()) wanted.insert(std::move(n));
  }
  AlmTargets t;
  t.tags.assign(tokens.size(), 0.0);
  bool first = true;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!wanted.count(normalize_word(tokens[i].word))) continue;
    t.tags[i] = 1.0;
    t.matched.insert(static_cast<int>(i));
    t.answer_box = first ? tokens[i].box : union_box(t.answer_box, tokens[i].box);
    first = false;
  }
  return t;
}

}  // namespace ltg
