#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "ltg/autograd.hpp"
#include "ltg/checkpoint.hpp"

namespace ltg::nn {
namespace {

// Central differences over every coordinate of every parameter. The floor
// absorbs roundoff on coordinates whose true gradient is zero (key biases).
double max_rel_error(ParamStore& ps, const std::function<Var(Graph&)>& f, double eps = 1e-5) {
  ps.zero_grad();
  {
    Graph g;
    g.backward(f(g));
  }
  double worst = 0.0;
  for (auto& e : ps.entries()) {
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      const double x = e.value.data()[i];
      e.value.data()[i] = x + eps;
      Graph gp;
      const double up = f(gp).scalar();
      e.value.data()[i] = x - eps;
      Graph gm;
      const double down = f(gm).scalar();
      e.value.data()[i] = x;
      const double num = (up - down) / (2 * eps);
      const double ana = e.grad.data()[i];
      worst = std::max(worst, std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-4}));
    }
  }
  return worst;
}

class OpGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{123};
  ParamStore ps;
  void SetUp() override {
    ps.add_normal("a", 3, 4, 0.7, rng);
    ps.add_normal("b", 4, 5, 0.7, rng);
    ps.add_normal("row", 1, 4, 0.7, rng);
    ps.add_normal("p", 5, 1, 0.7, rng);
  }
};

TEST_F(OpGradients, MatmulFamily) {
  EXPECT_LT(max_rel_error(ps, [&](Graph& g) {
              Var a = g.param(ps.at("a")), b = g.param(ps.at("b"));
              return sum_all(hadamard(matmul(a, b), matmul(a, b)));
            }), 1e-6);
  EXPECT_LT(max_rel_error(ps, [&](Graph& g) {
              Var a = g.param(ps.at("a"));
              return sum_all(tanh(matmul_nt(a, add_row(a, g.param(ps.at("row"))))));
            }), 1e-6);
}

TEST_F(OpGradients, Nonlinearities) {
  for (auto op : {+[](Var v) { return sigmoid(v); }, +[](Var v) { return gelu(v); },
                  +[](Var v) { return tanh(v); }}) {
    EXPECT_LT(max_rel_error(ps, [&](Graph& g) {
                Var a = g.param(ps.at("a"));
                return sum_all(hadamard(op(a), a));
              }), 1e-6);
  }
}

TEST_F(OpGradients, SoftmaxAndLayerNorm) {
  ps.add_constant("gamma", 1, 4, 1.3);
  ps.add_constant("beta", 1, 4, 0.1);
  Mat mask = Mat::Zero(3, 4);
  mask(1, 2) = -1e9;
  EXPECT_LT(max_rel_error(ps, [&](Graph& g) {
              Var a = g.param(ps.at("a"));
              Var s = softmax_rows(a, mask);
              Var n = layer_norm_rows(a, g.param(ps.at("gamma")), g.param(ps.at("beta")));
              return sum_all(hadamard(s, n));
            }), 1e-6);
}

TEST_F(OpGradients, Losses) {
  const std::vector<double> y = {1, 0, 0, 1, 0};
  EXPECT_LT(max_rel_error(ps, [&](Graph& g) {
              return binary_nll(sigmoid(g.param(ps.at("p"))), y, 1e-7);
            }), 1e-6);
  const std::vector<int> t = {0, 3, 1};
  EXPECT_LT(max_rel_error(ps, [&](Graph& g) { return cross_entropy_rows(g.param(ps.at("a")), t); }), 1e-6);
}

TEST_F(OpGradients, GathersSlicesConcats) {
  EXPECT_LT(max_rel_error(ps, [&](Graph& g) {
              Var a = g.param(ps.at("a"));
              Var m = gather_mean_rows(a, {{0, 2}, {1}, {2, 2, 0}});
              Var r = gather_rows(a, std::vector<int>{2, 2, 1});
              std::vector<Var> parts = {slice_rows(m, 1, 2), slice_cols(r, 0, 4)};
              Var c = concat_rows(parts);
              return sum_all(hadamard(concat_cols(c, c), concat_cols(c, scale(c, 2.0))));
            }), 1e-6);
}

TEST_F(OpGradients, Attention) {
  std::mt19937_64 r(1);
  ParamStore net;
  net.add_normal("x", 5, 8, 1.0, r);
  const Attention att = make_attention(net, "att", 8, 2, r);
  const Mat mask = causal_mask(5);
  EXPECT_LT(max_rel_error(net, [&](Graph& g) {
              Var x = g.param(net.at("x"));
              return sum_all(hadamard(apply(g, net, att, x, x, mask), x));
            }), 1e-5);
}

TEST(Graph, ParamGradientsAccumulateAcrossGraphs) {
  std::mt19937_64 rng(4);
  ParamStore ps;
  ps.add_normal("w", 2, 2, 1.0, rng);
  ps.zero_grad();
  for (int k = 0; k < 2; ++k) {
    Graph g;
    g.backward(sum_all(g.param(ps.at("w"))));
  }
  EXPECT_TRUE(ps.at("w").grad.isApproxToConstant(2.0));
}

TEST(ParamStore, DuplicateNameThrows) {
  ParamStore ps;
  ps.add_zeros("w", 1, 1);
  EXPECT_THROW(ps.add_zeros("w", 1, 1), std::logic_error);
}

TEST(Checkpoint, RoundTripAndShapeValidation) {
  std::mt19937_64 rng(8);
  ParamStore ps;
  ps.add_normal("w", 3, 2, 1.0, rng);
  ps.add_normal("b", 1, 2, 1.0, rng);
  const auto path = std::filesystem::temp_directory_path() / "ltg_test_params.ckpt";
  save_checkpoint(path, "test-kind", {{"k", 1}}, ps);
  EXPECT_EQ(read_checkpoint_header(path, "test-kind").at("config").at("k"), 1);
  EXPECT_THROW(read_checkpoint_header(path, "other-kind"), CheckpointError);

  ParamStore same;
  same.add_zeros("w", 3, 2);
  same.add_zeros("b", 1, 2);
  load_checkpoint_params(path, same);
  EXPECT_EQ(same.at("w").value, ps.at("w").value);
  EXPECT_EQ(same.at("b").value, ps.at("b").value);

  ParamStore wrong;
  wrong.add_zeros("w", 2, 3);
  wrong.add_zeros("b", 1, 2);
  EXPECT_THROW(load_checkpoint_params(path, wrong), CheckpointError);
}

}  // namespace
}  // namespace ltg::nn
