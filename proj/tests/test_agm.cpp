#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "ltg/agm.hpp"
#include "ltg/optimizer.hpp"
#include "ltg/vocab.hpp"

namespace ltg {
namespace {

std::vector<SceneTextToken> scene_tokens() { return generate_instance(WorldConfig{}, 8, "g").tokens; }

int count_sep(const GenInput& in) {
  return static_cast<int>(std::count(in.ids.begin(), in.ids.end(), Vocabulary::kSep));
}

TEST(BuildGenInput, EmptySelectionKeepsBothSeparators) {
  const auto in = build_gen_input({"what", "is", "it", "?"}, {}, scene_tokens(), 96);
  EXPECT_EQ(count_sep(in), 2);
  const auto first = std::find(in.ids.begin(), in.ids.end(), Vocabulary::kSep);
  EXPECT_EQ(*(first + 1), Vocabulary::kSep);
  EXPECT_EQ(in.ids.size(), in.segments.size());
}

TEST(BuildGenInput, SelectionMayDuplicateScene) {
  const auto tokens = scene_tokens();
  std::vector<std::string> all;
  for (int i : reading_order(tokens)) all.push_back(tokens[static_cast<std::size_t>(i)].word);
  const auto in = build_gen_input({"what"}, all, tokens, 200);
  EXPECT_EQ(count_sep(in), 2);
  const auto& v = Vocabulary::world();
  const auto sel = v.encode_words(all);
  const auto second = std::find(in.ids.begin() + 2, in.ids.end(), Vocabulary::kSep) + 1;
  EXPECT_TRUE(std::equal(sel.begin(), sel.end(), second));
  EXPECT_EQ(build_gen_input({"what"}, all, tokens, 200).ids, in.ids);
}

TEST(BuildGenInput, TruncatesSceneTailOnly) {
  const auto tokens = scene_tokens();
  const auto full = build_gen_input({"what", "is", "it"}, {"red"}, tokens, 500);
  const auto cut = build_gen_input({"what", "is", "it"}, {"red"}, tokens, 12);
  EXPECT_LE(cut.ids.size(), 12u);
  EXPECT_GT(cut.truncated_words, 0);
  EXPECT_TRUE(std::equal(cut.ids.begin(), cut.ids.end(), full.ids.begin()));
  EXPECT_EQ(count_sep(cut), 2);
  EXPECT_THROW(build_gen_input({"what", "is", "it"}, {"red"}, tokens, 3), std::invalid_argument);
}

TEST(BuildGenTarget, EndsWithEosAndStaysInVocabulary) {
  const auto t = build_gen_target({"fire", "907", "zqxv"});
  EXPECT_EQ(t.back(), Vocabulary::kEos);
  for (int id : t) {
    EXPECT_GE(id, 0);
    EXPECT_LT(id, Vocabulary::world().size());
  }
}

TEST(Vocabulary, NumbersUseThreeDigitPieces) {
  const auto& v = Vocabulary::world();
  const auto ids = v.encode_word("15");
  ASSERT_EQ(ids.size(), 3u);
  for (int id : ids) EXPECT_TRUE(v.is_digit_piece(id));
  EXPECT_EQ(v.decode(v.encode_words({"15", "fire", "unted"})), (std::vector<std::string>{"15", "fire", "unted"}));
}

TEST(GenLoss, UniformHeadGivesLengthTimesLogV) {
  AgmModel m(AgmConfig{}, 3);
  m.params().at("gen.out.w").value.setZero();
  m.params().at("gen.out.b").value.setZero();
  const GenBatch b{build_gen_input({"what"}, {"fire"}, scene_tokens(), 96), build_gen_target({"fire", "15"})};
  const double v = Vocabulary::world().size();
  EXPECT_NEAR(m.loss_value(b), static_cast<double>(b.target.size()) * std::log(v), 1e-9);
}

TEST(GenLoss, SameInputSameLoss) {
  AgmModel m(AgmConfig{}, 3);
  const GenBatch b{build_gen_input({"what"}, {"fire"}, scene_tokens(), 96), build_gen_target({"fire"})};
  EXPECT_EQ(m.loss_value(b), m.loss_value(b));
  GenBatch reordered = b;
  std::reverse(reordered.input.ids.begin(), reordered.input.ids.end());
  std::reverse(reordered.input.segments.begin(), reordered.input.segments.end());
  EXPECT_NE(m.loss_value(reordered), m.loss_value(b));
}

class Overfit : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model = std::make_unique<AgmModel>(AgmConfig{}, 11);
    WorldConfig wc;
    wc.n_train = 10;
    wc.n_test = 0;
    for (const auto& s : generate_dataset(wc, 5).train)
      batches.push_back({build_gen_input(s.question, s.answer_tokens, s.tokens, 96), build_gen_target(s.answer_tokens)});
    OptimizerConfig oc;
    oc.learning_rate = 3e-3;
    oc.cosine_decay = false;
    oc.warmup_fraction = 0.0;
    Optimizer opt(oc, model->params());
    for (const auto& b : batches) initial_loss += model->loss_value(b);
    for (int step = 0; step < 200; ++step) {
      model->params().zero_grad();
      for (const auto& b : batches) model->accumulate(b);
      opt.step(model->params(), oc.learning_rate);
    }
    for (const auto& b : batches) final_loss += model->loss_value(b);
  }
  static void TearDownTestSuite() { model.reset(); }
  static inline std::unique_ptr<AgmModel> model;
  static inline std::vector<GenBatch> batches;
  static inline double initial_loss = 0.0, final_loss = 0.0;
};

TEST_F(Overfit, LossDecreases) { EXPECT_LT(final_loss, 0.1 * initial_loss); }

TEST_F(Overfit, ReproducesGoldAnswers) {
  for (const auto& b : batches) {
    std::vector<int> gold(b.target.begin(), b.target.end() - 1);
    EXPECT_EQ(model->decode(b.input, DecodeConfig{}), gold);
  }
}

TEST_F(Overfit, BeamOfOneEqualsGreedyAndBeamFourAgrees) {
  DecodeConfig greedy, beam4;
  beam4.beam_size = 4;
  for (const auto& b : batches) {
    EXPECT_EQ(model->decode(b.input, greedy), model->decode(b.input, DecodeConfig{1, 12}));
    EXPECT_EQ(model->decode(b.input, beam4), model->decode(b.input, greedy));
  }
}

TEST(Generate, TerminatesWithinMaxLength) {
  AgmModel m(AgmConfig{}, 9);
  const auto in = build_gen_input({"what"}, {"fire"}, scene_tokens(), 96);
  for (int len : {1, 4, 12}) {
    DecodeConfig dc;
    dc.max_len = len;
    EXPECT_LE(static_cast<int>(m.decode(in, dc).size()), len);
    dc.beam_size = 3;
    EXPECT_LE(static_cast<int>(m.decode(in, dc).size()), len);
  }
  EXPECT_EQ(m.generate(in, DecodeConfig{}), m.generate(in, DecodeConfig{}));
}

TEST(AgmConfig, Validation) {
  AgmConfig c;
  c.heads = 3;
  EXPECT_THROW(validate(c), std::invalid_argument);
}

}  // namespace
}  // namespace ltg
