#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "ltg/dataworld.hpp"
#include "ltg/encoders.hpp"

namespace ltg {
namespace {

struct Fixture {
  ModelConfig cfg;
  nn::ParamStore ps;
  std::mt19937_64 rng{21};
  TextLayoutEncoder text{ps, cfg, rng};
  VisualEncoder visual{ps, cfg, rng};
};

std::vector<SceneTextToken> five_tokens() {
  return generate_instance(WorldConfig{}, 3, "e").tokens;
}

TEST(TextLayoutEncoder, Shapes) {
  Fixture f;
  auto tokens = five_tokens();
  tokens.resize(5);
  nn::Graph g;
  const auto enc = f.text.encode(g, f.ps, {"what", "is", "it", "?"}, tokens);
  EXPECT_EQ(enc.h_lang.rows(), 5);
  EXPECT_EQ(enc.h_lang.cols(), 64);
  EXPECT_EQ(enc.h_lay.rows(), 5);
  EXPECT_EQ(enc.h_lay.cols(), 64);
  EXPECT_EQ(enc.h_cls.rows(), 1);
  EXPECT_TRUE(enc.h_lang.value().allFinite() && enc.h_lay.value().allFinite());
}

TEST(TextLayoutEncoder, EquivariantToTokenOrder) {
  Fixture f;
  const auto tokens = five_tokens();
  auto swapped = tokens;
  std::swap(swapped[0], swapped[3]);
  nn::Graph g;
  const auto a = f.text.encode(g, f.ps, {"what", "?"}, tokens);
  const auto b = f.text.encode(g, f.ps, {"what", "?"}, swapped);
  EXPECT_TRUE(a.h_lang.value().row(0).isApprox(b.h_lang.value().row(3), 1e-12));
  EXPECT_TRUE(a.h_lay.value().row(3).isApprox(b.h_lay.value().row(0), 1e-12));
  EXPECT_TRUE(a.h_cls.value().isApprox(b.h_cls.value(), 1e-12));
}

TEST(TextLayoutEncoder, ZeroParamsGiveConstantRows) {
  Fixture f;
  for (auto& e : f.ps.entries()) e.value.setZero();
  nn::Graph g;
  const auto enc = f.text.encode(g, f.ps, {"what", "?"}, five_tokens());
  const nn::Mat& h = enc.h_lang.value();
  for (Eigen::Index i = 1; i < h.rows(); ++i) EXPECT_EQ(h.row(i), h.row(0));
}

TEST(TextLayoutEncoder, OverlongSequenceThrows) {
  Fixture f;
  std::vector<SceneTextToken> many(60, five_tokens().front());
  nn::Graph g;
  EXPECT_THROW(f.text.encode(g, f.ps, {"what"}, many), SequenceTooLong);
}

TEST(VisualEncoder, ShapesAndDeterminism) {
  Fixture f;
  const SceneInstance s = generate_instance(WorldConfig{}, 3, "v");
  nn::Graph g;
  const auto a = f.visual.encode(g, f.ps, s.question, s.visual_grid);
  const auto b = f.visual.encode(g, f.ps, s.question, s.visual_grid);
  EXPECT_EQ(a.h_v.rows(), 8);
  EXPECT_EQ(a.h_v.cols(), 64);
  EXPECT_EQ(a.h_cls.cols(), 64);
  EXPECT_EQ(a.h_v.value(), b.h_v.value());

  Fixture f2;
  nn::Graph g2;
  EXPECT_EQ(f2.visual.encode(g2, f2.ps, s.question, s.visual_grid).h_v.value(), a.h_v.value());
}

TEST(VisualEncoder, SensitiveToOneCell) {
  Fixture f;
  const SceneInstance s = generate_instance(WorldConfig{}, 3, "v");
  VisualGrid moved = s.visual_grid;
  for (int k = 0; k < moved.features; ++k) std::swap(moved.at(0, 0, k), moved.at(15, 15, k));
  moved.at(0, 0, 0) = 1.0;
  nn::Graph g;
  const auto a = f.visual.encode(g, f.ps, s.question, s.visual_grid);
  const auto b = f.visual.encode(g, f.ps, s.question, moved);
  EXPECT_FALSE(a.h_v.value().isApprox(b.h_v.value(), 1e-9));
}

TEST(VisualEncoder, GridShapeMismatchThrows) {
  Fixture f;
  VisualGrid grid;
  grid.size = 8;
  grid.features = kCellFeatures;
  grid.values.assign(8 * 8 * kCellFeatures, 0.0);
  nn::Graph g;
  EXPECT_THROW(f.visual.encode(g, f.ps, {"what"}, grid), std::invalid_argument);
}

TEST(ModelConfig, RejectsInconsistentShapes) {
  ModelConfig c;
  c.heads = 5;
  EXPECT_THROW(validate(c), std::invalid_argument);
  c = ModelConfig{};
  c.patch = 3;
  EXPECT_THROW(validate(c), std::invalid_argument);
}

}  // namespace
}  // namespace ltg
