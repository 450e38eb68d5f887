#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "ltg/alm.hpp"
#include "support.hpp"

namespace ltg {
namespace {

using nn::Graph;
using nn::Mat;
using nn::ParamStore;
using nn::Var;

SceneTextToken tok(const BBox& b, const std::string& w = "w") { return SceneTextToken{w, b, {}}; }

TEST(LinguisticProbs, ZeroWeightsGiveOneHalf) {
  ParamStore ps;
  ps.add_zeros("alm.w_l", 8, 1);
  ps.add_zeros("alm.b_l", 1, 1);
  Graph g;
  TextLayoutEncoding enc{g.constant(Mat::Random(3, 4)), g.constant(Mat::Random(3, 4)), g.constant(Mat::Zero(1, 4))};
  EXPECT_TRUE(linguistic_probs(g, ps, enc).value().isApproxToConstant(0.5));
}

TEST(LinguisticProbs, HandSetScalarCase) {
  ParamStore ps;
  ps.add_constant("alm.w_l", 2, 1, 1.0);
  ps.add_zeros("alm.b_l", 1, 1);
  Graph g;
  TextLayoutEncoding enc{g.constant(Mat::Constant(1, 1, 2.0)), g.constant(Mat::Constant(1, 1, 2.0)),
                         g.constant(Mat::Zero(1, 1))};
  EXPECT_NEAR(linguistic_probs(g, ps, enc).scalar(), testing::oracles()["scalars"]["sigmoid_4"].get<double>(), 1e-12);
}

TEST(LinguisticProbs, StrictlyInsideUnitInterval) {
  std::mt19937_64 rng(2);
  ParamStore ps;
  ps.add_normal("alm.w_l", 8, 1, 3.0, rng);
  ps.add_zeros("alm.b_l", 1, 1);
  Graph g;
  TextLayoutEncoding enc{g.constant(Mat::Random(6, 4)), g.constant(Mat::Random(6, 4)), g.constant(Mat::Zero(1, 4))};
  const Mat p = linguistic_probs(g, ps, enc).value();
  EXPECT_TRUE((p.array() > 0.0).all() && (p.array() < 1.0).all());
}

struct RegionFixture {
  static constexpr int d = 4;
  ParamStore ps;
  std::mt19937_64 rng{5};
  AlmHeads heads;
  RegionFixture() { heads = make_alm_heads(ps, d, rng); }
};

TEST(ProposeRegion, ClosedGateAndWeightedSpatialSum) {
  RegionFixture f;
  f.ps.at("alm.w_v").value.setConstant(-1e3);
  f.ps.at("alm.b_v").value.setConstant(-1e3);
  Graph g;
  const Mat r = Mat::Random(1, RegionFixture::d);
  Mat lay(2, RegionFixture::d);
  lay << r, r;
  VisualEncoding vis{g.constant(Mat::Constant(8, RegionFixture::d, 1.0)), g.constant(Mat::Zero(1, RegionFixture::d))};
  TextLayoutEncoding text{g.constant(Mat::Random(2, RegionFixture::d)), g.constant(lay),
                          g.constant(Mat::Zero(1, RegionFixture::d))};
  const auto rp = propose_region(g, f.ps, f.heads, vis, text, g.constant(Mat::Constant(2, 1, 0.5)));
  EXPECT_LT(rp.h_visual.value().cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(rp.h_spatial.value().isApprox(r, 1e-12));
  EXPECT_EQ(rp.h_a.cols(), 2 * RegionFixture::d);
}

TEST(CenterToCorners, ConversionAndClipping) {
  const BBox b = center_to_corners(0.5, 0.5, 0.2, 0.2);
  EXPECT_NEAR(b.x1, 0.4, 1e-15);
  EXPECT_NEAR(b.y1, 0.4, 1e-15);
  EXPECT_NEAR(b.x2, 0.6, 1e-15);
  EXPECT_NEAR(b.y2, 0.6, 1e-15);
  EXPECT_TRUE(is_valid(center_to_corners(0.95, 0.02, 0.5, 0.9)));
}

TEST(VisualProbs, Examples) {
  const std::vector<SceneTextToken> tokens = {tok({.4, .4, .6, .6}), tok({.7, .1, .9, .2})};
  EXPECT_EQ(visual_probs(BBox{0, 0, 1, 1}, tokens), (std::vector<double>{1, 1}));
  EXPECT_EQ(visual_probs(BBox{}, tokens), (std::vector<double>{0, 0}));
  EXPECT_NEAR(visual_probs(BBox{0, 0, .5, .5}, tokens)[0], testing::oracles()["scalars"]["iou_hat_quarter"].get<double>(), 1e-12);
}

TEST(SoftSwitch, ZeroHeadGivesOneHalfAndIsMonotone) {
  RegionFixture f;
  f.ps.at("alm.cls_out.w").value.setZero();
  f.ps.at("alm.cls_out.b").value.setZero();
  Graph g;
  const Var t = g.constant(Mat::Random(1, RegionFixture::d)), v = g.constant(Mat::Random(1, RegionFixture::d));
  EXPECT_DOUBLE_EQ(soft_switch(g, f.ps, f.heads, t, v).scalar(), 0.5);
  double last = 0.0;
  for (double b : {-2.0, -0.5, 0.0, 1.0, 3.0}) {
    f.ps.at("alm.cls_out.b").value.setConstant(b);
    const double p = soft_switch(g, f.ps, f.heads, t, v).scalar();
    EXPECT_GT(p, last);
    last = p;
  }
}

TEST(MixProbs, Examples) {
  const std::vector<double> pv = {1, 0}, pl = {0, 1};
  EXPECT_EQ(mix_probs(1.0, pv, pl), pv);
  EXPECT_EQ(mix_probs(0.0, pv, pl), pl);
  EXPECT_EQ(mix_probs(0.5, pv, pl), (std::vector<double>{.5, .5}));
  EXPECT_THROW(mix_probs(0.5, pv, std::vector<double>{1}), std::invalid_argument);
}

TEST(MixProbs, EndpointsExactAndConvexOnRandomDraws) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int draw = 0; draw < 10000; ++draw) {
    const std::vector<double> pv = {u(rng)}, pl = {u(rng)};
    const double ps = u(rng);
    const double pw = mix_probs(ps, pv, pl)[0];
    ASSERT_GE(pw, std::min(pv[0], pl[0]));
    ASSERT_LE(pw, std::max(pv[0], pl[0]));
    ASSERT_EQ(mix_probs(1.0, pv, pl)[0], pv[0]);
    ASSERT_EQ(mix_probs(0.0, pv, pl)[0], pl[0]);
  }
}

TEST(MixProbs, GraphMatchesPlainValues) {
  Graph g;
  const Mat pv = Mat::Random(4, 1).cwiseAbs(), pl = Mat::Random(4, 1).cwiseAbs();
  const Var pw = mix_probs(g.constant(Mat::Constant(1, 1, 0.3)), g.constant(pv), g.constant(pl));
  const auto plain = mix_probs(0.3, std::vector<double>(pv.data(), pv.data() + 4),
                               std::vector<double>(pl.data(), pl.data() + 4));
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(pw.value()(i, 0), plain[static_cast<std::size_t>(i)]);
}

TEST(SelectWords, ThresholdFallbackAndTies) {
  const std::vector<SceneTextToken> tokens = {tok({.5, .1, .6, .2}, "a"), tok({.1, .5, .2, .6}, "b"),
                                              tok({.1, .1, .2, .2}, "c")};
  const Selection s = select_words(std::vector<double>{.9, .1, .8}, tokens, 0.5);
  EXPECT_EQ(s, (Selection{{2, "c"}, {0, "a"}}));  // reading order
  EXPECT_EQ(select_words(std::vector<double>{.2, .4, .1}, tokens, 0.5), (Selection{{1, "b"}}));
  EXPECT_EQ(select_words(std::vector<double>{.3, .3, .3}, tokens, 0.5), (Selection{{0, "a"}}));
  EXPECT_TRUE(select_words(std::vector<double>{}, {}, 0.5).empty());
}

TEST(SelectWords, PermutationEquivariant) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<SceneTextToken> tokens;
    std::vector<double> p;
    for (int i = 0; i < 7; ++i) {
      tokens.push_back(tok(testing::random_box(rng), "w" + std::to_string(i)));
      p.push_back(u(rng));
    }
    std::vector<int> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<SceneTextToken> pt;
    std::vector<double> pp;
    for (int k : perm) {
      pt.push_back(tokens[static_cast<std::size_t>(k)]);
      pp.push_back(p[static_cast<std::size_t>(k)]);
    }
    std::vector<std::string> a, b;
    for (const auto& [i, w] : select_words(p, tokens, 0.5)) a.push_back(w);
    for (const auto& [i, w] : select_words(pp, pt, 0.5)) b.push_back(w);
    EXPECT_EQ(a, b);
  }
}

TEST(BoxLoss, ZeroExactlyAtCoincidence) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const BBox a = testing::random_box(rng), b = testing::random_box(rng);
    EXPECT_NEAR(box_loss(a, a, 5.0, 2.0), 0.0, 1e-12);
    EXPECT_GT(box_loss(a, b, 5.0, 2.0), 0.0);
  }
}

TEST(AlmLoss, SelectionOnlyWithZeroLambdas) {
  Graph g;
  AlmGraph out;
  out.p_w = g.leaf(Mat::Constant(1, 1, 0.5));
  out.box = g.leaf((Mat(1, 4) << 0.1, 0.1, 0.3, 0.4).finished());
  AlmTargets t;
  t.tags = {1.0};
  t.matched = {0};
  t.answer_box = BBox{.5, .5, .9, .9};
  AlmLossConfig cfg;
  cfg.lambda_l1 = 0.0;
  cfg.lambda_giou = 0.0;
  const AlmLoss l = alm_loss(out, t, cfg);
  EXPECT_NEAR(l.total.scalar(), testing::oracles()["scalars"]["bnll_half"].get<double>(), 1e-12);
  EXPECT_EQ(l.bbox, 0.0);
}

TEST(AlmLoss, OptimumIsClampFloor) {
  Graph g;
  AlmGraph out;
  out.p_w = g.leaf((Mat(3, 1) << 1.0, 0.0, 1.0).finished());
  out.box = g.leaf((Mat(1, 4) << 0.1, 0.2, 0.3, 0.4).finished());
  AlmTargets t;
  t.tags = {1, 0, 1};
  t.answer_box = BBox{.1, .2, .3, .4};
  const AlmLossConfig cfg;
  EXPECT_NEAR(alm_loss(out, t, cfg).total.scalar(), -3.0 * std::log(1.0 - cfg.clamp_eps), 1e-12);
}

TEST(AlmModel, ForwardInvariants) {
  AlmModel m(ModelConfig{}, AlmLossConfig{}, 4);
  WorldConfig wc;
  wc.n_train = 10;
  wc.n_test = 0;
  for (const auto& s : generate_dataset(wc, 3).train) {
    const AlmOutput o = m.predict(s);
    ASSERT_EQ(o.p_w.size(), s.tokens.size());
    EXPECT_GT(o.p_s, 0.0);
    EXPECT_LT(o.p_s, 1.0);
    EXPECT_TRUE(is_valid(o.b_p));
    EXPECT_EQ(o.h_a.size(), 128u);
    for (std::size_t i = 0; i < o.p_w.size(); ++i) {
      EXPECT_DOUBLE_EQ(o.p_w[i], o.p_s * o.p_v[i] + (1.0 - o.p_s) * o.p_l[i]);
      EXPECT_NEAR(o.p_v[i], iou_hat(o.b_p, s.tokens[i].box), 1e-12);
    }
    for (const auto& [i, w] : o.selected) EXPECT_EQ(s.tokens[static_cast<std::size_t>(i)].word, w);
  }
}

TEST(SelectBy, SourcesUseTheirProbabilities) {
  AlmOutput o;
  o.p_l = {0.9, 0.1};
  o.p_v = {0.1, 0.9};
  o.p_w = {0.6, 0.2};
  const std::vector<SceneTextToken> tokens = {tok({.1, .1, .2, .2}, "l"), tok({.3, .1, .4, .2}, "v")};
  EXPECT_EQ(select_by(o, tokens, SelectionSource::Linguistic, 0.5), (Selection{{0, "l"}}));
  EXPECT_EQ(select_by(o, tokens, SelectionSource::Visual, 0.5), (Selection{{1, "v"}}));
  EXPECT_EQ(select_by(o, tokens, SelectionSource::Mixed, 0.5), (Selection{{0, "l"}}));
  EXPECT_TRUE(select_by(o, tokens, SelectionSource::None, 0.5).empty());
  EXPECT_EQ(parse_selection_source("mixed"), SelectionSource::Mixed);
  EXPECT_THROW(parse_selection_source("both"), std::invalid_argument);
}

TEST(AlmLossConfig, Validation) {
  AlmLossConfig c;
  c.lambda_l1 = -1.0;
  EXPECT_THROW(validate(c), std::invalid_argument);
  c = AlmLossConfig{};
  c.select_threshold = 1.0;
  EXPECT_THROW(validate(c), std::invalid_argument);
}

}  // namespace
}  // namespace ltg
