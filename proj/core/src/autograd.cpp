#include "ltg/autograd.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ltg::nn {

// ---------------------------------------------------------------------------
// ParamStore

ParamStore::Entry& ParamStore::add(const std::string& name, Mat init) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter: " + name);
  index_[name] = entries_.size();
  Mat grad = Mat::Zero(init.rows(), init.cols());
  entries_.push_back(Entry{name, std::move(init), std::move(grad)});
  return entries_.back();
}

ParamStore::Entry& ParamStore::add_normal(const std::string& name, int rows,
                                          int cols, double stddev,
                                          std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  return add(name, std::move(m));
}

ParamStore::Entry& ParamStore::add_zeros(const std::string& name, int rows,
                                         int cols) {
  return add(name, Mat::Zero(rows, cols));
}

ParamStore::Entry& ParamStore::add_constant(const std::string& name, int rows,
                                            int cols, double v) {
  return add(name, Mat::Constant(rows, cols, v));
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second];
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return entries_[it->second];
}

bool ParamStore::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.setZero();
}

std::size_t ParamStore::size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

bool ParamStore::all_finite() const {
  for (const auto& e : entries_)
    if (!e.value.allFinite()) return false;
  return true;
}

void ParamStore::accumulate_grad(const ParamStore& other) {
  if (other.entries_.size() != entries_.size())
    throw std::logic_error("accumulate_grad: store layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i)
    entries_[i].grad += other.entries_[i].grad;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.entries_.size() != entries_.size())
    throw std::logic_error("copy_values_from: store layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& src = other.entries_[i];
    auto& dst = entries_[i];
    if (src.name != dst.name || src.value.rows() != dst.value.rows() ||
        src.value.cols() != dst.value.cols())
      throw std::logic_error("copy_values_from: mismatch at " + dst.name);
    dst.value = src.value;
  }
}

// ---------------------------------------------------------------------------
// Graph

const Mat& Var::value() const { return g->value(id); }

double Var::scalar() const {
  const Mat& v = value();
  if (v.size() != 1) throw std::logic_error("scalar() on non-1x1 node");
  return v(0, 0);
}

Var Graph::constant(Mat m) {
  Node n;
  n.value = std::move(m);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::param(ParamStore::Entry& e) {
  Node n;
  n.external = &e.value;
  n.sink = &e.grad;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::leaf(Mat m) {
  Node n;
  n.value = std::move(m);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::record(Mat value, std::initializer_list<Var> inputs,
                  Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Graph::record(Mat value, std::span<const Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

const Mat& Graph::value(int id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

Mat& Graph::grad(int id) {
  Node& n = nodes_[id];
  // Parameter leaves accumulate straight into the store.
  if (n.sink) return *n.sink;
  if (n.grad.size() == 0) {
    const Mat& v = value(id);
    n.grad = Mat::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.g != this) throw std::logic_error("backward on foreign node");
  if (value(loss.id).size() != 1) throw std::logic_error("backward needs a scalar");
  grad(loss.id)(0, 0) += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Operations

namespace {
void check_same(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = *a.g;
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
  Mat out = a.value() * b.value();
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Mat& gy = g.grad(self);
    if (g.needs_grad(a.id)) g.grad(a.id).noalias() += gy * g.value(b.id).transpose();
    if (g.needs_grad(b.id)) g.grad(b.id).noalias() += g.value(a.id).transpose() * gy;
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = *a.g;
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: shape mismatch");
  Mat out = a.value() * b.value().transpose();
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Mat& gy = g.grad(self);
    if (g.needs_grad(a.id)) g.grad(a.id).noalias() += gy * g.value(b.id);
    if (g.needs_grad(b.id)) g.grad(b.id).noalias() += gy.transpose() * g.value(a.id);
  });
}

Var transpose(Var a) {
  Graph& g = *a.g;
  Mat out = a.value().transpose();
  return g.record(std::move(out), {a}, [a](Graph& g, int self) {
    g.grad(a.id) += g.grad(self).transpose();
  });
}

Var operator+(Var a, Var b) {
  Graph& g = *a.g;
  check_same(a.value(), b.value(), "add");
  Mat out = a.value() + b.value();
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Mat& gy = g.grad(self);
    if (g.needs_grad(a.id)) g.grad(a.id) += gy;
    if (g.needs_grad(b.id)) g.grad(b.id) += gy;
  });
}

Var operator-(Var a, Var b) {
  Graph& g = *a.g;
  check_same(a.value(), b.value(), "sub");
  Mat out = a.value() - b.value();
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Mat& gy = g.grad(self);
    if (g.needs_grad(a.id)) g.grad(a.id) += gy;
    if (g.needs_grad(b.id)) g.grad(b.id) -= gy;
  });
}

Var hadamard(Var a, Var b) {
  Graph& g = *a.g;
  check_same(a.value(), b.value(), "hadamard");
  Mat out = a.value().cwiseProduct(b.value());
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, int self) {
    const Mat& gy = g.grad(self);
    if (g.needs_grad(a.id)) g.grad(a.id) += gy.cwiseProduct(g.value(b.id));
    if (g.needs_grad(b.id)) g.grad(b.id) += gy.cwiseProduct(g.value(a.id));
  });
}

Var scale(Var a, double s) {
  Graph& g = *a.g;
  Mat out = a.value() * s;
  return g.record(std::move(out), {a}, [a, s](Graph& g, int self) {
    g.grad(a.id) += g.grad(self) * s;
  });
}

Var add_scalar(Var a, double s) {
  Graph& g = *a.g;
  Mat out = a.value().array() + s;
  return g.record(std::move(out), {a}, [a](Graph& g, int self) {
    g.grad(a.id) += g.grad(self);
  });
}

Var add_row(Var a, Var row) {
  Graph& g = *a.g;
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument("add_row: shape mismatch");
  Mat out = a.value().rowwise() + row.value().row(0);
  return g.record(std::move(out), {a, row}, [a, row](Graph& g, int self) {
    const Mat& gy = g.grad(self);
    if (g.needs_grad(a.id)) g.grad(a.id) += gy;
    if (g.needs_grad(row.id)) g.grad(row.id) += gy.colwise().sum();
  });
}

Var mul_scalar(Var a, Var s) {
  Graph& g = *a.g;
  if (s.value().size() != 1) throw std::invalid_argument("mul_scalar: need 1x1");
  Mat out = a.value() * s.scalar();
  return g.record(std::move(out), {a, s}, [a, s](Graph& g, int self) {
    const Mat& gy = g.grad(self);
    if (g.needs_grad(a.id)) g.grad(a.id) += gy * g.value(s.id)(0, 0);
    if (g.needs_grad(s.id)) g.grad(s.id)(0, 0) += gy.cwiseProduct(g.value(a.id)).sum();
  });
}

Var mul_rows(Var a, Var col) {
  Graph& g = *a.g;
  if (col.cols() != 1 || col.rows() != a.rows())
    throw std::invalid_argument("mul_rows: shape mismatch");
  Mat out = col.value().col(0).asDiagonal() * a.value();
  return g.record(std::move(out), {a, col}, [a, col](Graph& g, int self) {
    const Mat& gy = g.grad(self);
    if (g.needs_grad(a.id)) g.grad(a.id) += g.value(col.id).col(0).asDiagonal() * gy;
    if (g.needs_grad(col.id))
      g.grad(col.id) += gy.cwiseProduct(g.value(a.id)).rowwise().sum();
  });
}

Var sigmoid(Var a) {
  Graph& g = *a.g;
  // exp overflows to inf for very negative x, which still yields 0.
  Mat out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return g.record(std::move(out), {a}, [a](Graph& g, int self) {
    const Mat& y = g.value(self);
    g.grad(a.id).array() += g.grad(self).array() * y.array() * (1.0 - y.array());
  });
}

Var relu(Var a) {
  Graph& g = *a.g;
  Mat out = a.value().cwiseMax(0.0);
  return g.record(std::move(out), {a}, [a](Graph& g, int self) {
    g.grad(a.id).array() +=
        (g.value(a.id).array() > 0.0).cast<double>() * g.grad(self).array();
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

namespace {
/// tanh through exp so Eigen can vectorize it.
Eigen::ArrayXXd fast_tanh(const Eigen::ArrayXXd& u) {
  return 1.0 - 2.0 / ((2.0 * u).exp() + 1.0);
}
}  // namespace

Var gelu(Var a) {
  Graph& g = *a.g;
  const Eigen::ArrayXXd x = a.value().array();
  const Eigen::ArrayXXd t = fast_tanh(kGeluC * (x + 0.044715 * x.cube()));
  Mat out = (0.5 * x * (1.0 + t)).matrix();
  return g.record(std::move(out), {a}, [a, t](Graph& g, int self) {
    const Eigen::ArrayXXd x = g.value(a.id).array();
    const Eigen::ArrayXXd du = kGeluC * (1.0 + 3.0 * 0.044715 * x.square());
    const Eigen::ArrayXXd d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t.square()) * du;
    g.grad(a.id).array() += d * g.grad(self).array();
  });
}

Var tanh(Var a) {
  Graph& g = *a.g;
  Mat out = a.value().array().tanh();
  return g.record(std::move(out), {a}, [a](Graph& g, int self) {
    const Mat& y = g.value(self);
    g.grad(a.id).array() += g.grad(self).array() * (1.0 - y.array().square());
  });
}

Var softmax_rows(Var a, const Mat& mask) {
  Graph& g = *a.g;
  Mat z = a.value();
  if (mask.size() != 0) {
    check_same(z, mask, "softmax mask");
    z += mask;
  }
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - m).exp();
    z.row(i) /= z.row(i).sum();
  }
  return g.record(std::move(z), {a}, [a](Graph& g, int self) {
    const Mat& y = g.value(self);
    const Mat& gy = g.grad(self);
    Eigen::VectorXd dots = y.cwiseProduct(gy).rowwise().sum();
    g.grad(a.id) += y.cwiseProduct(gy - dots.replicate(1, gy.cols()));
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  Graph& g = *x.g;
  const Mat& xv = x.value();
  const Eigen::Index n = xv.cols();
  if (gamma.cols() != n || beta.cols() != n)
    throw std::invalid_argument("layer_norm: shape mismatch");
  Mat xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double mean = xv.row(i).mean();
    const double var = (xv.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mean) * inv_std(i);
  }
  Mat out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
            beta.value().row(0).array();
  return g.record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Graph& g, int self) {
        const Mat& gy = g.grad(self);
        if (g.needs_grad(gamma.id))
          g.grad(gamma.id) += gy.cwiseProduct(xhat).colwise().sum();
        if (g.needs_grad(beta.id)) g.grad(beta.id) += gy.colwise().sum();
        if (g.needs_grad(x.id)) {
          Mat gx = gy.array().rowwise() * g.value(gamma.id).row(0).array();
          const double n = static_cast<double>(gx.cols());
          Mat& dst = g.grad(x.id);
          for (Eigen::Index i = 0; i < gx.rows(); ++i) {
            const double m1 = gx.row(i).sum() / n;
            const double m2 = gx.row(i).cwiseProduct(xhat.row(i)).sum() / n;
            dst.row(i).array() +=
                inv_std(i) * (gx.row(i).array() - m1 - xhat.row(i).array() * m2);
          }
        }
      });
}

Var concat_cols(Var a, Var b) {
  Graph& g = *a.g;
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: rows differ");
  Mat out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ca = a.cols(), cb = b.cols();
  return g.record(std::move(out), {a, b}, [a, b, ca, cb](Graph& g, int self) {
    const Mat& gy = g.grad(self);
    if (g.needs_grad(a.id)) g.grad(a.id) += gy.leftCols(ca);
    if (g.needs_grad(b.id)) g.grad(b.id) += gy.rightCols(cb);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Graph& g = *parts.front().g;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: cols differ");
    rows += p.rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  std::vector<Eigen::Index> offsets;
  for (const Var& p : parts) {
    offsets.push_back(r);
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return g.record(std::move(out), parts,
                  [inputs, offsets](Graph& g, int self) {
                    const Mat& gy = g.grad(self);
                    for (std::size_t k = 0; k < inputs.size(); ++k) {
                      const Var& p = inputs[k];
                      if (!g.needs_grad(p.id)) continue;
                      g.grad(p.id) += gy.middleRows(offsets[k], g.value(p.id).rows());
                    }
                  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index n) {
  Graph& g = *a.g;
  if (start < 0 || n < 0 || start + n > a.rows())
    throw std::out_of_range("slice_rows: out of range");
  Mat out = a.value().middleRows(start, n);
  return g.record(std::move(out), {a}, [a, start, n](Graph& g, int self) {
    g.grad(a.id).middleRows(start, n) += g.grad(self);
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
  Graph& g = *a.g;
  if (start < 0 || n < 0 || start + n > a.cols())
    throw std::out_of_range("slice_cols: out of range");
  Mat out = a.value().middleCols(start, n);
  return g.record(std::move(out), {a}, [a, start, n](Graph& g, int self) {
    g.grad(a.id).middleCols(start, n) += g.grad(self);
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Graph& g = *table.g;
  const Mat& t = table.value();
  Mat out(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows()) throw std::out_of_range("gather_rows: id");
    out.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return g.record(std::move(out), {table}, [table, idv](Graph& g, int self) {
    const Mat& gy = g.grad(self);
    Mat& gt = g.grad(table.id);
    for (std::size_t i = 0; i < idv.size(); ++i)
      gt.row(idv[i]) += gy.row(static_cast<Eigen::Index>(i));
  });
}

Var gather_mean_rows(Var table, const std::vector<std::vector<int>>& groups) {
  Graph& g = *table.g;
  const Mat& t = table.value();
  Mat out = Mat::Zero(static_cast<Eigen::Index>(groups.size()), t.cols());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].empty()) continue;
    for (int id : groups[i]) {
      if (id < 0 || id >= t.rows()) throw std::out_of_range("gather_mean_rows: id");
      out.row(static_cast<Eigen::Index>(i)) += t.row(id);
    }
    out.row(static_cast<Eigen::Index>(i)) /= static_cast<double>(groups[i].size());
  }
  return g.record(std::move(out), {table}, [table, groups](Graph& g, int self) {
    const Mat& gy = g.grad(self);
    Mat& gt = g.grad(table.id);
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (groups[i].empty()) continue;
      const double w = 1.0 / static_cast<double>(groups[i].size());
      for (int id : groups[i]) gt.row(id) += w * gy.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var sum_rows(Var a) {
  Graph& g = *a.g;
  Mat out = a.value().colwise().sum();
  return g.record(std::move(out), {a}, [a](Graph& g, int self) {
    g.grad(a.id).rowwise() += g.grad(self).row(0);
  });
}

Var sum_all(Var a) {
  Graph& g = *a.g;
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return g.record(std::move(out), {a}, [a](Graph& g, int self) {
    g.grad(a.id).array() += g.grad(self)(0, 0);
  });
}

Var binary_nll(Var p, std::span<const double> targets, double eps) {
  Graph& g = *p.g;
  const Mat& pv = p.value();
  if (pv.cols() != 1 || pv.rows() != static_cast<Eigen::Index>(targets.size()))
    throw std::invalid_argument("binary_nll: shape mismatch");
  std::vector<double> y(targets.begin(), targets.end());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < pv.rows(); ++i) {
    const double q = std::clamp(pv(i, 0), eps, 1.0 - eps);
    loss -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  Mat out(1, 1);
  out(0, 0) = loss;
  return g.record(std::move(out), {p}, [p, y, eps](Graph& g, int self) {
    const double gy = g.grad(self)(0, 0);
    const Mat& pv = g.value(p.id);
    Mat& gp = g.grad(p.id);
    for (Eigen::Index i = 0; i < pv.rows(); ++i) {
      const double raw = pv(i, 0);
      if (raw < eps || raw > 1.0 - eps) continue;  // clamped: flat
      gp(i, 0) += gy * (-y[i] / raw + (1.0 - y[i]) / (1.0 - raw));
    }
  });
}

Var cross_entropy_rows(Var logits, std::span<const int> targets) {
  Graph& g = *logits.g;
  const Mat& z = logits.value();
  if (z.rows() != static_cast<Eigen::Index>(targets.size()))
    throw std::invalid_argument("cross_entropy_rows: shape mismatch");
  Mat probs(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= z.cols()) throw std::out_of_range("cross_entropy_rows: target");
    const double m = z.row(i).maxCoeff();
    probs.row(i) = (z.row(i).array() - m).exp();
    const double s = probs.row(i).sum();
    probs.row(i) /= s;
    loss -= z(i, t) - m - std::log(s);
  }
  Mat out(1, 1);
  out(0, 0) = loss;
  std::vector<int> tv(targets.begin(), targets.end());
  return g.record(std::move(out), {logits},
                  [logits, tv, probs = std::move(probs)](Graph& g, int self) {
                    const double gy = g.grad(self)(0, 0);
                    Mat d = probs;
                    for (std::size_t i = 0; i < tv.size(); ++i)
                      d(static_cast<Eigen::Index>(i), tv[i]) -= 1.0;
                    g.grad(logits.id) += gy * d;
                  });
}

// ---------------------------------------------------------------------------
// Building blocks

Linear make_linear(ParamStore& ps, const std::string& name, int in, int out,
                   std::mt19937_64& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
  ps.add_normal(name + ".w", in, out, stddev, rng);
  ps.add_zeros(name + ".b", 1, out);
  return Linear{name + ".w", name + ".b"};
}

Var apply(Graph& g, ParamStore& ps, const Linear& l, Var x) {
  return add_row(matmul(x, g.param(ps.at(l.weight))), g.param(ps.at(l.bias)));
}

LayerNorm make_layer_norm(ParamStore& ps, const std::string& name, int dim) {
  ps.add_constant(name + ".gamma", 1, dim, 1.0);
  ps.add_zeros(name + ".beta", 1, dim);
  return LayerNorm{name + ".gamma", name + ".beta"};
}

Var apply(Graph& g, ParamStore& ps, const LayerNorm& ln, Var x) {
  return layer_norm_rows(x, g.param(ps.at(ln.gamma)), g.param(ps.at(ln.beta)));
}

Attention make_attention(ParamStore& ps, const std::string& name, int dim,
                         int heads, std::mt19937_64& rng) {
  if (dim % heads != 0) throw std::invalid_argument("attention: dim % heads != 0");
  Attention a;
  a.heads = heads;
  a.q = make_linear(ps, name + ".q", dim, dim, rng);
  a.k = make_linear(ps, name + ".k", dim, dim, rng);
  a.v = make_linear(ps, name + ".v", dim, dim, rng);
  a.o = make_linear(ps, name + ".o", dim, dim, rng);
  return a;
}

Var apply(Graph& g, ParamStore& ps, const Attention& att, Var q_in, Var kv_in,
          const Mat& mask) {
  Var q = apply(g, ps, att.q, q_in);
  Var k = apply(g, ps, att.k, kv_in);
  Var v = apply(g, ps, att.v, kv_in);
  const Eigen::Index dim = q.cols();
  const Eigen::Index dh = dim / att.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(att.heads));
  for (int h = 0; h < att.heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var weights = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), mask);
    heads.push_back(matmul(weights, vh));
  }
  Var merged = heads.front();
  for (std::size_t h = 1; h < heads.size(); ++h) merged = concat_cols(merged, heads[h]);
  return apply(g, ps, att.o, merged);
}

FeedForward make_feed_forward(ParamStore& ps, const std::string& name, int dim,
                              int hidden, std::mt19937_64& rng) {
  return FeedForward{make_linear(ps, name + ".in", dim, hidden, rng),
                     make_linear(ps, name + ".out", hidden, dim, rng)};
}

Var apply(Graph& g, ParamStore& ps, const FeedForward& ff, Var x) {
  return apply(g, ps, ff.out, gelu(apply(g, ps, ff.in, x)));
}

EncoderLayer make_encoder_layer(ParamStore& ps, const std::string& name,
                                int dim, int heads, int hidden,
                                std::mt19937_64& rng) {
  EncoderLayer l;
  l.self = make_attention(ps, name + ".self", dim, heads, rng);
  l.ln1 = make_layer_norm(ps, name + ".ln1", dim);
  l.ff = make_feed_forward(ps, name + ".ff", dim, hidden, rng);
  l.ln2 = make_layer_norm(ps, name + ".ln2", dim);
  return l;
}

Var apply(Graph& g, ParamStore& ps, const EncoderLayer& layer, Var x,
          const Mat& mask) {
  Var h = apply(g, ps, layer.ln1, x + apply(g, ps, layer.self, x, x, mask));
  return apply(g, ps, layer.ln2, h + apply(g, ps, layer.ff, h));
}

DecoderLayer make_decoder_layer(ParamStore& ps, const std::string& name,
                                int dim, int heads, int hidden,
                                std::mt19937_64& rng) {
  DecoderLayer l;
  l.self = make_attention(ps, name + ".self", dim, heads, rng);
  l.ln1 = make_layer_norm(ps, name + ".ln1", dim);
  l.cross = make_attention(ps, name + ".cross", dim, heads, rng);
  l.ln2 = make_layer_norm(ps, name + ".ln2", dim);
  l.ff = make_feed_forward(ps, name + ".ff", dim, hidden, rng);
  l.ln3 = make_layer_norm(ps, name + ".ln3", dim);
  return l;
}

Var apply(Graph& g, ParamStore& ps, const DecoderLayer& layer, Var x,
          Var memory, const Mat& self_mask) {
  Var h = apply(g, ps, layer.ln1, x + apply(g, ps, layer.self, x, x, self_mask));
  h = apply(g, ps, layer.ln2, h + apply(g, ps, layer.cross, h, memory));
  return apply(g, ps, layer.ln3, h + apply(g, ps, layer.ff, h));
}

Mat causal_mask(Eigen::Index n) {
  Mat m = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = -1e9;
  return m;
}

Eigen::RowVectorXd sinusoid(double pos, int dim) {
  Eigen::RowVectorXd out(dim);
  for (int i = 0; i < dim; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
    out(i) = std::sin(pos * freq);
    if (i + 1 < dim) out(i + 1) = std::cos(pos * freq);
  }
  return out;
}

}  // namespace ltg::nn
