#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "ltg/dataworld.hpp"
#include "ltg/preprocess.hpp"
#include "support.hpp"

namespace ltg {
namespace {

SceneTextToken tok(const std::string& w, const BBox& b) { return SceneTextToken{w, b, {}}; }

TEST(NormalizeWord, Examples) {
  EXPECT_EQ(normalize_word("America,"), "america");
  EXPECT_EQ(normalize_word("201"), "201");
  EXPECT_EQ(normalize_word(""), "");
  EXPECT_EQ(normalize_word("\"Don't!\""), "don't");
}

TEST(BuildTargets, SingleNumberMatch) {
  const BBox b3{.6, .1, .7, .2};
  const auto t = build_targets({"15"}, {tok("to", {.1, .1, .2, .2}), tok("201", {.3, .1, .4, .2}), tok("15", b3)});
  EXPECT_EQ(t.tags, (std::vector<double>{0, 0, 1}));
  EXPECT_EQ(t.answer_box, b3);
}

TEST(BuildTargets, TwoTokensGiveClosedFormUnion) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 500; ++i) {
    const BBox bk = testing::random_box(rng, 0.0), bl = testing::random_box(rng, 0.0);
    const auto t = build_targets({"united", "states"},
                                 {tok("of", testing::random_box(rng, 0.0)), tok("united", bk), tok("states", bl)});
    const BBox expected{std::min(bk.x1, bl.x1), std::min(bk.y1, bl.y1), std::max(bk.x2, bl.x2),
                        std::max(bk.y2, bl.y2)};
    EXPECT_EQ(t.answer_box, expected);
    EXPECT_EQ(t.matched, (std::set<int>{1, 2}));
  }
}

TEST(BuildTargets, NoMatchGivesZeroBox) {
  const auto t = build_targets({"nothing"}, {tok("a", {.1, .1, .2, .2}), tok("b", {.3, .3, .4, .4})});
  EXPECT_EQ(t.tags, (std::vector<double>{0, 0}));
  EXPECT_EQ(t.answer_box, BBox{});
  EXPECT_TRUE(build_targets({"x"}, {}).tags.empty());
}

TEST(BuildTargets, MatchesEveryOccurrence) {
  const auto t = build_targets({"Stop"}, {tok("stop", {.1, .1, .2, .2}), tok("go", {.3, .3, .4, .4}),
                                          tok("STOP.", {.5, .5, .6, .6})});
  EXPECT_EQ(t.matched, (std::set<int>{0, 2}));
  EXPECT_EQ(t.answer_box, (BBox{.1, .1, .6, .6}));
}

TEST(BuildTargets, Properties) {
  WorldConfig c;
  c.n_train = 150;
  c.n_test = 0;
  std::mt19937_64 rng(2);
  for (const auto& s : generate_dataset(c, 31).train) {
    const AlmTargets t = build_targets(s.answer_tokens, s.tokens);
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      EXPECT_EQ(t.tags[i] == 1.0, t.matched.count(static_cast<int>(i)) == 1);
      if (t.tags[i] == 1.0) EXPECT_TRUE(contains(t.answer_box, s.tokens[i].box));
    }
    // Permuting the token list permutes the tags and keeps the box.
    std::vector<int> perm(s.tokens.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<SceneTextToken> shuffled;
    for (int p : perm) shuffled.push_back(s.tokens[static_cast<std::size_t>(p)]);
    const AlmTargets ts = build_targets(s.answer_tokens, shuffled);
    EXPECT_EQ(ts.answer_box, t.answer_box);
    for (std::size_t k = 0; k < perm.size(); ++k) EXPECT_EQ(ts.tags[k], t.tags[static_cast<std::size_t>(perm[k])]);
    // An unmatched extra token changes nothing.
    auto extended = s.tokens;
    extended.push_back(tok("zzzz", testing::random_box(rng, 0.0)));
    EXPECT_EQ(build_targets(s.answer_tokens, extended).answer_box, t.answer_box);
  }
}

TEST(BuildTargets, CopyTemplatesAlwaysTagSomething) {
  WorldConfig c;
  c.n_train = 300;
  c.n_test = 0;
  for (const auto& s : generate_dataset(c, 41).train) {
    if (!requires_copy(parse_template(s.template_name))) continue;
    EXPECT_FALSE(build_targets(s.answer_tokens, s.tokens).matched.empty()) << s.id;
  }
}

}  // namespace
}  // namespace ltg
