#include "gacd/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>

namespace gacd::nn {

// ---------------------------------------------------------------- ParamStore

int ParamStore::add(const std::string& name, Matrix init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
  Param p;
  p.name = name;
  p.grad = Matrix::Zero(init.rows(), init.cols());
  p.m = p.grad;
  p.v = p.grad;
  p.value = std::move(init);
  params_.push_back(std::move(p));
  const int id = static_cast<int>(params_.size()) - 1;
  index_[name] = id;
  return id;
}

int ParamStore::add_glorot(const std::string& name, int rows, int cols, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) w(i, j) = rng.uniform(-s, s);
  return add(name, std::move(w));
}

int ParamStore::add_zeros(const std::string& name, int rows, int cols) { return add(name, Matrix::Zero(rows, cols)); }

int ParamStore::add_constant(const std::string& name, int rows, int cols, double v) {
  return add(name, Matrix::Constant(rows, cols, v));
}

int ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

Param& ParamStore::at(const std::string& name) { return at(index_of(name)); }
const Param& ParamStore::at(const std::string& name) const { return at(index_of(name)); }

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

double ParamStore::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& p : params_)
    if (!p.frozen) sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params_)
      if (!p.frozen) p.grad *= s;
  }
  return norm;
}

void ParamStore::adam_step(const AdamConfig& cfg) {
  ++step_;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
  for (auto& p : params_) {
    if (p.frozen) continue;
    p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * p.grad;
    p.v = cfg.beta2 * p.v + (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= cfg.lr * (p.m.array() / c1) / ((p.v.array() / c2).sqrt() + cfg.eps);
  }
}

void ParamStore::set_frozen(const std::string& prefix, bool frozen) {
  for (auto& p : params_)
    if (p.name.rfind(prefix, 0) == 0) p.frozen = frozen;
}

std::uint64_t ParamStore::hash(const std::string& prefix) const {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params_) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    feed(p.name.data(), p.name.size());
    feed(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(double));
  }
  return h;
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

// ---------------------------------------------------------------- Tape

const Matrix& Var::value() const { return tape->node(id).value; }

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

Var Tape::param(ParamStore& store, int index) {
  Node n;
  n.value = store.at(index).value;
  n.requires_grad = !store.at(index).frozen;
  n.param = index;
  n.store = &store;
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

Matrix& Tape::grad(int id) {
  Node& n = node(id);
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::push(Matrix value, std::vector<int> inputs, std::function<void(Tape&, int)> backward) {
  Node n;
  n.value = std::move(value);
  for (int i : inputs) n.requires_grad = n.requires_grad || node(i).requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  if (!std::isfinite(loss.scalar())) throw std::runtime_error("backward: non-finite loss");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad(loss.id)(0, 0) = 1.0;
  visits_ = 0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = node(i);
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) {
      n.backward(*this, i);
      ++visits_;
    }
    if (n.param >= 0) {
      Param& p = n.store->at(n.param);
      if (!p.frozen) p.grad += node(i).grad;
    }
  }
}

// ---------------------------------------------------------------- ops

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands live on different tapes");
  return *a.tape;
}

void check_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

bool needs(Tape& t, int id) { return t.node(id).requires_grad; }

template <typename F, typename D>
Var unary(Var a, F f, D df) {
  Tape& t = *a.tape;
  Matrix out = a.value().unaryExpr(f);
  const int ai = a.id;
  return t.push(std::move(out), {ai}, [ai, df](Tape& tp, int self) {
    const Matrix& x = tp.node(ai).value;
    const Matrix& y = tp.node(self).value;
    Matrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) g.data()[i] = df(x.data()[i], y.data()[i]);
    tp.grad(ai) += tp.node(self).grad.cwiseProduct(g);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  const int ai = a.id, bi = b.id;
  return t.push(a.value() * b.value(), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    if (needs(tp, ai)) tp.grad(ai).noalias() += g * tp.node(bi).value.transpose();
    if (needs(tp, bi)) tp.grad(bi).noalias() += tp.node(ai).value.transpose() * g;
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a, b, "add");
  const int ai = a.id, bi = b.id;
  return t.push(a.value() + b.value(), {ai, bi}, [ai, bi](Tape& tp, int self) {
    if (needs(tp, ai)) tp.grad(ai) += tp.node(self).grad;
    if (needs(tp, bi)) tp.grad(bi) += tp.node(self).grad;
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a, b, "sub");
  const int ai = a.id, bi = b.id;
  return t.push(a.value() - b.value(), {ai, bi}, [ai, bi](Tape& tp, int self) {
    if (needs(tp, ai)) tp.grad(ai) += tp.node(self).grad;
    if (needs(tp, bi)) tp.grad(bi) -= tp.node(self).grad;
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a, b, "mul");
  const int ai = a.id, bi = b.id;
  return t.push(a.value().cwiseProduct(b.value()), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    if (needs(tp, ai)) tp.grad(ai) += g.cwiseProduct(tp.node(bi).value);
    if (needs(tp, bi)) tp.grad(bi) += g.cwiseProduct(tp.node(ai).value);
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bias shape");
  const int ai = a.id, ri = row.id;
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return t.push(std::move(out), {ai, ri}, [ai, ri](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    if (needs(tp, ai)) tp.grad(ai) += g;
    if (needs(tp, ri)) tp.grad(ri) += g.colwise().sum();
  });
}

Var mul_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("mul_row: shape");
  const int ai = a.id, ri = row.id;
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return t.push(std::move(out), {ai, ri}, [ai, ri](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    if (needs(tp, ai)) tp.grad(ai).array() += g.array().rowwise() * tp.node(ri).value.row(0).array();
    if (needs(tp, ri)) tp.grad(ri) += g.cwiseProduct(tp.node(ai).value).colwise().sum();
  });
}

Var mul_col(Var a, Var col) {
  Tape& t = tape_of(a, col);
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("mul_col: shape");
  const int ai = a.id, ci = col.id;
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return t.push(std::move(out), {ai, ci}, [ai, ci](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    if (needs(tp, ai)) tp.grad(ai).array() += g.array().colwise() * tp.node(ci).value.col(0).array();
    if (needs(tp, ci)) tp.grad(ci) += g.cwiseProduct(tp.node(ai).value).rowwise().sum();
  });
}

Var scale(Var a, double s) {
  const int ai = a.id;
  return a.tape->push(a.value() * s, {ai}, [ai, s](Tape& tp, int self) { tp.grad(ai) += s * tp.node(self).grad; });
}

Var add_scalar(Var a, double s) {
  const int ai = a.id;
  return a.tape->push(a.value().array() + s, {ai}, [ai](Tape& tp, int self) { tp.grad(ai) += tp.node(self).grad; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + 0.044715 * x * x * x);
        const double th = std::tanh(u);
        const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var minimum(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a, b, "minimum");
  const int ai = a.id, bi = b.id;
  return t.push(a.value().cwiseMin(b.value()), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    const Matrix& x = tp.node(ai).value;
    const Matrix& y = tp.node(bi).value;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      // Ties route the gradient to the first operand.
      if (x.data()[i] <= y.data()[i]) {
        if (needs(tp, ai)) tp.grad(ai).data()[i] += g.data()[i];
      } else if (needs(tp, bi)) {
        tp.grad(bi).data()[i] += g.data()[i];
      }
    }
  });
}

Var clip(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var transpose(Var a) {
  const int ai = a.id;
  return a.tape->push(a.value().transpose(), {ai},
                      [ai](Tape& tp, int self) { tp.grad(ai) += tp.node(self).grad.transpose(); });
}

Var sum(Var a) {
  const int ai = a.id;
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->push(std::move(out), {ai},
                      [ai](Tape& tp, int self) { tp.grad(ai).array() += tp.node(self).grad(0, 0); });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  const int ai = a.id;
  return a.tape->push(a.value().rowwise().sum(), {ai}, [ai](Tape& tp, int self) {
    tp.grad(ai).colwise() += tp.node(self).grad.col(0);
  });
}

Var row_norm(Var a, double eps) {
  const int ai = a.id;
  Matrix out = (a.value().rowwise().squaredNorm().array() + eps).sqrt().matrix();
  return a.tape->push(std::move(out), {ai}, [ai](Tape& tp, int self) {
    const Matrix& y = tp.node(self).value;
    const Matrix& g = tp.node(self).grad;
    const Matrix& x = tp.node(ai).value;
    Matrix& ga = tp.grad(ai);
    for (Eigen::Index r = 0; r < x.rows(); ++r) ga.row(r) += (g(r, 0) / y(r, 0)) * x.row(r);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = *parts[0].tape;
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> starts;
  for (const Var& p : parts) {
    if (p.tape != &t || p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    starts.push_back(cols);
    cols += p.cols();
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) out.middleCols(starts[i], parts[i].cols()) = parts[i].value();
  return t.push(std::move(out), ids, [ids, starts](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (needs(tp, ids[i])) tp.grad(ids[i]) += g.middleCols(starts[i], tp.node(ids[i]).value.cols());
  });
}

Var slice_cols(Var a, int start, int count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  const int ai = a.id;
  return a.tape->push(a.value().middleCols(start, count), {ai}, [ai, start, count](Tape& tp, int self) {
    tp.grad(ai).middleCols(start, count) += tp.node(self).grad;
  });
}

Var gather_rows(Var a, const std::vector<int>& rows) {
  const Matrix& x = a.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  }
  const int ai = a.id;
  return a.tape->push(std::move(out), {ai}, [ai, rows](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    Matrix& ga = tp.grad(ai);
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var gather_elems(Var a, const std::vector<std::pair<int, int>>& idx) {
  const Matrix& x = a.value();
  Matrix out(static_cast<Eigen::Index>(idx.size()), 1);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto [r, c] = idx[i];
    if (r < 0 || r >= x.rows() || c < 0 || c >= x.cols()) throw std::out_of_range("gather_elems: index out of range");
    out(static_cast<Eigen::Index>(i), 0) = x(r, c);
  }
  const int ai = a.id;
  return a.tape->push(std::move(out), {ai}, [ai, idx](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    Matrix& ga = tp.grad(ai);
    for (std::size_t i = 0; i < idx.size(); ++i) ga(idx[i].first, idx[i].second) += g(static_cast<Eigen::Index>(i), 0);
  });
}

Var scatter_add(Var a, const std::vector<int>& src, const std::vector<int>& dst, const std::vector<double>& w,
                int out_rows) {
  if (src.size() != dst.size() || src.size() != w.size()) throw std::invalid_argument("scatter_add: size mismatch");
  const Matrix& x = a.value();
  Matrix out = Matrix::Zero(out_rows, x.cols());
  for (std::size_t e = 0; e < src.size(); ++e) {
    if (src[e] < 0 || src[e] >= x.rows() || dst[e] < 0 || dst[e] >= out_rows)
      throw std::out_of_range("scatter_add: index out of range");
    out.row(dst[e]) += w[e] * x.row(src[e]);
  }
  const int ai = a.id;
  return a.tape->push(std::move(out), {ai}, [ai, src, dst, w](Tape& tp, int self) {
    const Matrix& g = tp.node(self).grad;
    Matrix& ga = tp.grad(ai);
    for (std::size_t e = 0; e < src.size(); ++e) ga.row(src[e]) += w[e] * g.row(dst[e]);
  });
}

Var segment_mean(Var a, const std::vector<int>& offsets) {
  if (offsets.size() < 2 || offsets.back() != a.rows()) throw std::invalid_argument("segment_mean: bad offsets");
  std::vector<int> src, dst;
  std::vector<double> w;
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
    const int n = offsets[g + 1] - offsets[g];
    if (n <= 0) throw std::invalid_argument("segment_mean: empty segment");
    for (int r = offsets[g]; r < offsets[g + 1]; ++r) {
      src.push_back(r);
      dst.push_back(static_cast<int>(g));
      w.push_back(1.0 / n);
    }
  }
  return scatter_add(a, src, dst, w, static_cast<int>(offsets.size()) - 1);
}

Var row_standardize(Var a, double eps) {
  const Matrix& x = a.value();
  const Eigen::Index c = x.cols();
  Matrix out(x.rows(), c);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    out.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  const int ai = a.id;
  return a.tape->push(std::move(out), {ai}, [ai, inv_std](Tape& tp, int self) {
    const Matrix& y = tp.node(self).value;
    const Matrix& g = tp.node(self).grad;
    Matrix& ga = tp.grad(ai);
    const double n = static_cast<double>(y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double gm = g.row(r).mean();
      const double gy = g.row(r).dot(y.row(r)) / n;
      ga.row(r).array() += inv_std(r) * (g.row(r).array() - gm - y.row(r).array() * gy);
    }
  });
}

Var bce_with_logits(Var logits, const Matrix& targets) {
  const Matrix& x = logits.value();
  if (targets.rows() != x.rows() || targets.cols() != x.cols()) throw std::invalid_argument("bce_with_logits: shape");
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double z = x.data()[i], y = targets.data()[i];
    out.data()[i] = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  const int ai = logits.id;
  return logits.tape->push(std::move(out), {ai}, [ai, targets](Tape& tp, int self) {
    const Matrix& z = tp.node(ai).value;
    const Matrix& g = tp.node(self).grad;
    Matrix& ga = tp.grad(ai);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double zi = z.data()[i];
      const double s = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
      ga.data()[i] += g.data()[i] * (s - targets.data()[i]);
    }
  });
}

Var segment_log_softmax(Var logits, const std::vector<int>& offsets, const std::vector<std::uint8_t>& mask) {
  const Matrix& x = logits.value();
  if (x.cols() != 1) throw std::invalid_argument("segment_log_softmax: expects a column");
  if (static_cast<Eigen::Index>(mask.size()) != x.rows() || offsets.empty() || offsets.back() != x.rows())
    throw std::invalid_argument("segment_log_softmax: mask/offset size mismatch");
  Matrix out = Matrix::Zero(x.rows(), 1);
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int r = offsets[g]; r < offsets[g + 1]; ++r)
      if (mask[static_cast<std::size_t>(r)]) mx = std::max(mx, x(r, 0));
    if (!std::isfinite(mx)) throw std::invalid_argument("segment_log_softmax: segment fully masked");
    double z = 0.0;
    for (int r = offsets[g]; r < offsets[g + 1]; ++r)
      if (mask[static_cast<std::size_t>(r)]) z += std::exp(x(r, 0) - mx);
    const double lse = mx + std::log(z);
    for (int r = offsets[g]; r < offsets[g + 1]; ++r)
      if (mask[static_cast<std::size_t>(r)]) out(r, 0) = x(r, 0) - lse;
  }
  const int ai = logits.id;
  return logits.tape->push(std::move(out), {ai}, [ai, offsets, mask](Tape& tp, int self) {
    const Matrix& y = tp.node(self).value;
    const Matrix& g = tp.node(self).grad;
    Matrix& ga = tp.grad(ai);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      double gs = 0.0;
      for (int r = offsets[s]; r < offsets[s + 1]; ++r)
        if (mask[static_cast<std::size_t>(r)]) gs += g(r, 0);
      for (int r = offsets[s]; r < offsets[s + 1]; ++r)
        if (mask[static_cast<std::size_t>(r)]) ga(r, 0) += g(r, 0) - std::exp(y(r, 0)) * gs;
    }
  });
}

Var row_log_softmax(Var logits, const Matrix& mask) {
  const Matrix& x = logits.value();
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) throw std::invalid_argument("row_log_softmax: mask shape");
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (mask(r, c) != 0.0) mx = std::max(mx, x(r, c));
    if (!std::isfinite(mx)) throw std::invalid_argument("row_log_softmax: row fully masked");
    double z = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (mask(r, c) != 0.0) z += std::exp(x(r, c) - mx);
    const double lse = mx + std::log(z);
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (mask(r, c) != 0.0) out(r, c) = x(r, c) - lse;
  }
  const int ai = logits.id;
  return logits.tape->push(std::move(out), {ai}, [ai, mask](Tape& tp, int self) {
    const Matrix& y = tp.node(self).value;
    const Matrix& g = tp.node(self).grad;
    Matrix& ga = tp.grad(ai);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (Eigen::Index c = 0; c < y.cols(); ++c)
        if (mask(r, c) != 0.0) gs += g(r, c);
      for (Eigen::Index c = 0; c < y.cols(); ++c)
        if (mask(r, c) != 0.0) ga(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
    }
  });
}

Var segment_attention(Var q, Var k, Var v, Var bias_table, int heads, const std::vector<int>& offsets,
                      const std::vector<std::vector<int>>& buckets) {
  Tape& t = *q.tape;
  const Eigen::Index n = q.rows(), dim = q.cols();
  if (k.rows() != n || v.rows() != n || k.cols() != dim || v.cols() != dim)
    throw std::invalid_argument("segment_attention: q/k/v shape mismatch");
  if (heads <= 0 || dim % heads != 0) throw std::invalid_argument("segment_attention: heads must divide width");
  if (bias_table.rows() != heads || bias_table.cols() != kSpdBuckets)
    throw std::invalid_argument("segment_attention: bias table shape");
  if (offsets.empty() || offsets.back() != n || buckets.size() + 1 != offsets.size())
    throw std::invalid_argument("segment_attention: offsets/buckets mismatch");
  const int dk = static_cast<int>(dim / heads);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  const Matrix& B = bias_table.value();
  Matrix out = Matrix::Zero(n, dim);
  // Attention weights per (graph, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<Matrix>>();
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
    const int lo = offsets[g], m = offsets[g + 1] - offsets[g];
    if (static_cast<int>(buckets[g].size()) != m * m) throw std::invalid_argument("segment_attention: bucket size");
    for (int h = 0; h < heads; ++h) {
      Matrix s = Q.block(lo, h * dk, m, dk) * K.block(lo, h * dk, m, dk).transpose() * inv;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) s(i, j) += B(h, buckets[g][static_cast<std::size_t>(i * m + j)]);
      for (int i = 0; i < m; ++i) {
        const double mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
      }
      out.block(lo, h * dk, m, dk) = s * V.block(lo, h * dk, m, dk);
      probs->push_back(std::move(s));
    }
  }
  const int qi = q.id, ki = k.id, vi = v.id, bi = bias_table.id;
  return t.push(std::move(out), {qi, ki, vi, bi},
                [qi, ki, vi, bi, heads, dk, inv, offsets, buckets, probs](Tape& tp, int self) {
                  const Matrix& G = tp.node(self).grad;
                  const Matrix& Q = tp.node(qi).value;
                  const Matrix& K = tp.node(ki).value;
                  const Matrix& V = tp.node(vi).value;
                  const bool gq = needs(tp, qi), gk = needs(tp, ki), gv = needs(tp, vi), gb = needs(tp, bi);
                  std::size_t pi = 0;
                  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
                    const int lo = offsets[g], m = offsets[g + 1] - offsets[g];
                    for (int h = 0; h < heads; ++h, ++pi) {
                      const Matrix& A = (*probs)[pi];
                      const Matrix dO = G.block(lo, h * dk, m, dk);
                      if (gv) tp.grad(vi).block(lo, h * dk, m, dk) += A.transpose() * dO;
                      const Matrix dA = dO * V.block(lo, h * dk, m, dk).transpose();
                      Matrix dS = A.cwiseProduct(dA);
                      const Eigen::VectorXd rs = dS.rowwise().sum();
                      dS -= A.cwiseProduct(rs.replicate(1, m));
                      if (gq) tp.grad(qi).block(lo, h * dk, m, dk) += inv * dS * K.block(lo, h * dk, m, dk);
                      if (gk) tp.grad(ki).block(lo, h * dk, m, dk) += inv * dS.transpose() * Q.block(lo, h * dk, m, dk);
                      if (gb) {
                        Matrix& gbt = tp.grad(bi);
                        for (int i = 0; i < m; ++i)
                          for (int j = 0; j < m; ++j)
                            gbt(h, buckets[g][static_cast<std::size_t>(i * m + j)]) += dS(i, j);
                      }
                    }
                  }
                });
}

std::vector<double> masked_softmax(const std::vector<double>& logits, const std::vector<bool>& mask) {
  if (logits.size() != mask.size()) throw std::invalid_argument("masked_softmax: size mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) mx = std::max(mx, logits[i]);
  if (!std::isfinite(mx)) throw std::invalid_argument("masked_softmax: all entries masked");
  std::vector<double> p(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) z += (p[i] = std::exp(logits[i] - mx));
  for (double& x : p) x /= z;
  return p;
}

// ---------------------------------------------------------------- layers

Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::Relu: return relu(x);
    case Activation::Gelu: return gelu(x);
    case Activation::Tanh: return tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, bool bias) {
  w = store.add_glorot(name + ".w", in, out, rng);
  if (bias) b = store.add_zeros(name + ".b", 1, out);
}

Var Linear::operator()(Tape& t, ParamStore& store, Var x) const {
  Var y = matmul(x, t.param(store, w));
  return b >= 0 ? add_row(y, t.param(store, b)) : y;
}

Mlp::Mlp(ParamStore& store, const std::string& name, const std::vector<int>& dims, Activation a, Rng& rng) : act(a) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp needs at least input and output widths");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    layers.emplace_back(store, name + "." + std::to_string(i), dims[i], dims[i + 1], rng);
}

Var Mlp::operator()(Tape& t, ParamStore& store, Var x) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](t, store, x);
    if (i + 1 < layers.size()) x = activate(x, act);
  }
  return x;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int dim) {
  gamma = store.add_constant(name + ".gamma", 1, dim, 1.0);
  beta = store.add_zeros(name + ".beta", 1, dim);
}

Var LayerNorm::operator()(Tape& t, ParamStore& store, Var x) const {
  return add_row(mul_row(row_standardize(x), t.param(store, gamma)), t.param(store, beta));
}

EdgeIndex make_edge_index(int num_nodes, const std::vector<std::pair<int, int>>& edges) {
  EdgeIndex e;
  e.num_nodes = num_nodes;
  std::vector<int> indeg(static_cast<std::size_t>(num_nodes), 0);
  for (const auto& [s, d] : edges) {
    if (s < 0 || d < 0 || s >= num_nodes || d >= num_nodes) throw std::out_of_range("edge index out of range");
    e.src.push_back(s);
    e.dst.push_back(d);
    indeg[static_cast<std::size_t>(d)]++;
  }
  for (int d : e.dst) e.in_mean_weight.push_back(1.0 / indeg[static_cast<std::size_t>(d)]);
  return e;
}

MpLayer::MpLayer(ParamStore& store, const std::string& name, int in, int out, bool g, Activation a, Rng& rng)
    : gated(g), act(a) {
  self = Linear(store, name + ".self", in, out, rng);
  nbr = Linear(store, name + ".nbr", in, out, rng, false);
  if (gated) {
    gate_src = Linear(store, name + ".gate_src", in, 1, rng, false);
    gate_dst = Linear(store, name + ".gate_dst", in, 1, rng);
  }
}

Var MpLayer::operator()(Tape& t, ParamStore& store, Var x, const EdgeIndex& edges) const {
  if (x.rows() != edges.num_nodes) throw std::invalid_argument("MpLayer: node count mismatch");
  Var h = self(t, store, x);
  if (!edges.src.empty()) {
    Var msg = gather_rows(nbr(t, store, x), edges.src);
    if (gated) {
      Var gate = sigmoid(add(gather_rows(gate_src(t, store, x), edges.src), gather_rows(gate_dst(t, store, x), edges.dst)));
      msg = mul_col(msg, gate);
    }
    std::vector<int> rows(edges.src.size());
    for (std::size_t e = 0; e < rows.size(); ++e) rows[e] = static_cast<int>(e);
    h = add(h, scatter_add(msg, rows, edges.dst, edges.in_mean_weight, edges.num_nodes));
  }
  return activate(h, act);
}

int spd_bucket(int distance) { return (distance >= 0 && distance <= 8) ? distance : kSpdBuckets - 1; }

GraphormerLayer::GraphormerLayer(ParamStore& store, const std::string& name, int dim, int h, Activation act,
                                 Rng& rng)
    : heads(h) {
  if (dim % h != 0) throw std::invalid_argument("GraphormerLayer: heads must divide width");
  ln1 = LayerNorm(store, name + ".ln1", dim);
  ln2 = LayerNorm(store, name + ".ln2", dim);
  q = Linear(store, name + ".q", dim, dim, rng);
  k = Linear(store, name + ".k", dim, dim, rng, false);  // a key bias cancels in the softmax
  v = Linear(store, name + ".v", dim, dim, rng);
  o = Linear(store, name + ".o", dim, dim, rng);
  ffn = Mlp(store, name + ".ffn", {dim, 2 * dim, dim}, act, rng);
  bias = store.add_zeros(name + ".spd_bias", h, kSpdBuckets);
}

Var GraphormerLayer::operator()(Tape& t, ParamStore& store, Var x, const std::vector<int>& offsets,
                                const std::vector<std::vector<int>>& buckets) const {
  Var a = ln1(t, store, x);
  Var att = segment_attention(q(t, store, a), k(t, store, a), v(t, store, a), t.param(store, bias), heads, offsets,
                              buckets);
  x = add(x, o(t, store, att));
  return add(x, ffn(t, store, ln2(t, store, x)));
}

// ---------------------------------------------------------------- checking

FdReport finite_difference_check(const std::function<Var(Tape&, ParamStore&)>& f, ParamStore& store, double h,
                                 double floor, int max_entries_per_param, std::uint64_t seed) {
  store.zero_grad();
  {
    Tape t;
    Var loss = f(t, store);
    t.backward(loss);
  }
  std::vector<Matrix> analytic;
  for (const auto& p : store.params()) analytic.push_back(p.grad);

  auto eval = [&]() {
    Tape t;
    return f(t, store).scalar();
  };
  FdReport rep;
  Rng rng(seed);
  for (int pi = 0; pi < store.size(); ++pi) {
    Param& p = store.at(pi);
    if (p.frozen) continue;
    std::vector<int> entries(static_cast<std::size_t>(p.value.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = static_cast<int>(i);
    if (max_entries_per_param > 0 && static_cast<int>(entries.size()) > max_entries_per_param) {
      rng.shuffle(entries);
      entries.resize(static_cast<std::size_t>(max_entries_per_param));
    }
    for (int e : entries) {
      double& x = p.value.data()[e];
      const double orig = x;
      x = orig + h;
      const double fp = eval();
      x = orig - h;
      const double fm = eval();
      x = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[static_cast<std::size_t>(pi)].data()[e];
      const double rel = std::abs(a - numeric) / std::max(floor, std::abs(numeric));
      ++rep.checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = p.name;
        rep.worst_index = e;
        rep.analytic = a;
        rep.numeric = numeric;
      }
    }
  }
  store.zero_grad();
  return rep;
}

// ---------------------------------------------------------------- checkpoints

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  return lo | (static_cast<std::uint64_t>(get_u32(is)) << 32);
}

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("GACD", 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    put_u32(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put_u32(os, static_cast<std::uint32_t>(r.dims.size()));
    std::int64_t count = 1;
    for (auto d : r.dims) {
      put_u64(os, static_cast<std::uint64_t>(d));
      count *= d;
    }
    if (count != static_cast<std::int64_t>(r.data.size())) throw std::invalid_argument("checkpoint record size mismatch");
    for (float f : r.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(os, bits);
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "GACD", 4) != 0) throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  const std::uint32_t n = get_u32(is);
  std::vector<CheckpointRecord> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    CheckpointRecord r;
    r.name.resize(get_u32(is));
    if (!is.read(r.name.data(), static_cast<std::streamsize>(r.name.size()))) throw std::runtime_error("checkpoint: truncated name");
    const std::uint32_t rank = get_u32(is);
    std::int64_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      r.dims.push_back(static_cast<std::int64_t>(get_u64(is)));
      count *= r.dims.back();
    }
    r.data.resize(static_cast<std::size_t>(count));
    for (auto& f : r.data) {
      const std::uint32_t bits = get_u32(is);
      std::memcpy(&f, &bits, 4);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<CheckpointRecord> to_records(const ParamStore& store) {
  std::vector<CheckpointRecord> out;
  for (const auto& p : store.params()) {
    CheckpointRecord r;
    r.name = p.name;
    r.dims = {p.value.rows(), p.value.cols()};
    r.data.resize(static_cast<std::size_t>(p.value.size()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) r.data[static_cast<std::size_t>(i)] = static_cast<float>(p.value.data()[i]);
    out.push_back(std::move(r));
  }
  return out;
}

void load_records(ParamStore& store, const std::vector<CheckpointRecord>& records) {
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  for (auto& p : store.params()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint missing parameter " + p.name);
    const auto& r = *it->second;
    if (r.dims.size() != 2 || r.dims[0] != p.value.rows() || r.dims[1] != p.value.cols())
      throw std::runtime_error("checkpoint shape mismatch for " + p.name);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = r.data[static_cast<std::size_t>(i)];
  }
}

}  // namespace gacd::nn
