#pragma once

// A small reverse-mode tape over dense Eigen matrices.
//
// Every model in the library builds one Graph per instance: parameters enter
// as leaves bound to a ParamStore entry, operations record a backward closure,
// and Graph::backward() accumulates into the ParamStore gradients. Graphs are
// single-use and single-threaded; the ParamStore they read is not modified
// during a forward pass, so several graphs may read the same store
// concurrently.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ltg::nn {

using Mat = Eigen::MatrixXd;

/// Named learnable tensors plus their gradient accumulators.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Mat value;
    Mat grad;
  };

  /// Registers a parameter. Re-registering a name throws.
  Entry& add(const std::string& name, Mat init);
  Entry& add_normal(const std::string& name, int rows, int cols, double stddev,
                    std::mt19937_64& rng);
  Entry& add_zeros(const std::string& name, int rows, int cols);
  Entry& add_constant(const std::string& name, int rows, int cols, double v);

  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grad();
  std::size_t size() const;  // total scalar count
  bool all_finite() const;
  /// Adds `other`'s gradients into this store's (same registration order).
  void accumulate_grad(const ParamStore& other);
  /// Copies values from `other`; shapes and names must match exactly.
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

class Graph;

/// Handle to a node on a Graph.
struct Var {
  Graph* g = nullptr;
  int id = -1;

  const Mat& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  Var constant(Mat m);
  Var param(ParamStore::Entry& e);
  /// Leaf with a gradient slot that callers can read after backward().
  Var leaf(Mat m);

  /// Records a node. `inputs` decide whether the node needs a gradient.
  Var record(Mat value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Mat value, std::span<const Var> inputs, Backward backward);

  const Mat& value(int id) const;
  Mat& grad(int id);
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  /// Seeds d(loss)/d(loss) = 1 and runs the tape in reverse.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    Mat* sink = nullptr;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Elementwise and linear-algebra operations.
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var transpose(Var a);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// a (n x k) + row (1 x k) broadcast over rows.
Var add_row(Var a, Var row);
/// a (n x k) scaled by the 1x1 node `s`.
Var mul_scalar(Var a, Var s);
/// Multiplies each row i of `a` by `col(i)`, col is n x 1.
Var mul_rows(Var a, Var col);

Var sigmoid(Var a);
Var relu(Var a);
Var gelu(Var a);
Var tanh(Var a);

/// Row-wise softmax; `mask`, if non-empty, is added to the logits first.
Var softmax_rows(Var a, const Mat& mask = Mat());
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

Var concat_cols(Var a, Var b);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index n);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index n);
/// Rows of `table` selected by `ids`.
Var gather_rows(Var table, std::span<const int> ids);
/// Mean over groups of rows of `table`; each group is one output row.
Var gather_mean_rows(Var table, const std::vector<std::vector<int>>& groups);
Var sum_rows(Var a);  // column sums, 1 x k
Var sum_all(Var a);

/// Sum over rows of -[y log p + (1-y) log(1-p)], p clamped to [eps, 1-eps].
Var binary_nll(Var p, std::span<const double> targets, double eps);
/// Sum over rows of -log softmax(logits)[target].
Var cross_entropy_rows(Var logits, std::span<const int> targets);

// Building blocks shared by the encoders and the generator.

struct Linear {
  std::string weight;  // in x out
  std::string bias;    // 1 x out
};
Linear make_linear(ParamStore& ps, const std::string& name, int in, int out,
                   std::mt19937_64& rng);
Var apply(Graph& g, ParamStore& ps, const Linear& l, Var x);

struct LayerNorm {
  std::string gamma;
  std::string beta;
};
LayerNorm make_layer_norm(ParamStore& ps, const std::string& name, int dim);
Var apply(Graph& g, ParamStore& ps, const LayerNorm& ln, Var x);

/// Multi-head attention; queries from `q_in`, keys/values from `kv_in`.
struct Attention {
  int heads = 1;
  Linear q, k, v, o;
};
Attention make_attention(ParamStore& ps, const std::string& name, int dim,
                         int heads, std::mt19937_64& rng);
Var apply(Graph& g, ParamStore& ps, const Attention& att, Var q_in, Var kv_in,
          const Mat& mask = Mat());

struct FeedForward {
  Linear in, out;
};
FeedForward make_feed_forward(ParamStore& ps, const std::string& name, int dim,
                              int hidden, std::mt19937_64& rng);
Var apply(Graph& g, ParamStore& ps, const FeedForward& ff, Var x);

/// Post-norm transformer encoder layer.
struct EncoderLayer {
  Attention self;
  LayerNorm ln1;
  FeedForward ff;
  LayerNorm ln2;
};
EncoderLayer make_encoder_layer(ParamStore& ps, const std::string& name,
                                int dim, int heads, int hidden,
                                std::mt19937_64& rng);
Var apply(Graph& g, ParamStore& ps, const EncoderLayer& layer, Var x,
          const Mat& mask = Mat());

/// Post-norm transformer decoder layer (self, cross, feed-forward).
struct DecoderLayer {
  Attention self;
  LayerNorm ln1;
  Attention cross;
  LayerNorm ln2;
  FeedForward ff;
  LayerNorm ln3;
};
DecoderLayer make_decoder_layer(ParamStore& ps, const std::string& name,
                                int dim, int heads, int hidden,
                                std::mt19937_64& rng);
Var apply(Graph& g, ParamStore& ps, const DecoderLayer& layer, Var x,
          Var memory, const Mat& self_mask = Mat());

/// Additive mask that blocks attention to future positions.
Mat causal_mask(Eigen::Index n);

/// Sinusoidal embedding of a scalar position into `dim` channels.
Eigen::RowVectorXd sinusoid(double pos, int dim);

}  // namespace ltg::nn
