#include "reengage/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace reengage::ad {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string shape_str(const Mat& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kScalarMul: return "scalar_mul";
    case Op::kScalarAdd: return "scalar_add";
    case Op::kMatMul: return "matmul";
    case Op::kMatMulNT: return "matmul_nt";
    case Op::kMatMulTN: return "matmul_tn";
    case Op::kAffine: return "affine";
    case Op::kTranspose: return "transpose";
    case Op::kRowBcast: return "row_broadcast";
    case Op::kColBcast: return "col_broadcast";
    case Op::kFill: return "fill";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kRowSum: return "row_sum";
    case Op::kColSum: return "col_sum";
    case Op::kRelu: return "relu";
    case Op::kReluMask: return "relu_mask";
    case Op::kTanh: return "tanh";
    case Op::kSquare: return "square";
    case Op::kExp: return "exp";
    case Op::kSqrt: return "sqrt";
    case Op::kClip: return "clip";
    case Op::kClipMask: return "clip_mask";
    case Op::kHConcat2: return "hconcat";
    case Op::kHSlice: return "hslice";
    case Op::kHPad: return "hpad";
    case Op::kSoftmax: return "softmax";
    case Op::kRowMax: return "row_max";
    case Op::kRowMaxMask: return "row_max_mask";
    case Op::kSelectCols: return "select_cols";
    case Op::kScatterCols: return "scatter_cols";
    case Op::kHuber: return "huber";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Value

const Mat& Value::mat() const { return tape_->value_of(id_); }

double Value::scalar() const {
  const Mat& m = mat();
  if (m.rows() != 1 || m.cols() != 1)
    fail("Value::scalar: node is " + shape_str(m) + ", not 1x1");
  return m(0, 0);
}

Eigen::Index Value::rows() const { return mat().rows(); }
Eigen::Index Value::cols() const { return mat().cols(); }
bool Value::requires_grad() const { return tape_->node_requires_grad(id_); }

// ---------------------------------------------------------------------------
// GradMap

Value GradMap::at(Value v) const {
  auto it = grads_.find(v.id());
  if (it == grads_.end()) fail("GradMap::at: no gradient recorded for node");
  return it->second;
}

Value GradMap::at_or_zero(Value v) const {
  auto it = grads_.find(v.id());
  if (it != grads_.end()) return it->second;
  return v.tape()->constant(Mat::Zero(v.rows(), v.cols()));
}

// ---------------------------------------------------------------------------
// Tape: node plumbing

const Tape::Node& Tape::node(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) fail("Tape: node id not on tape");
  return nodes_[id];
}

Value Tape::make(Op op, Mat value, int p0, int p1, double aux0, double aux1, int p2) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.p0 = p0;
  n.p1 = p1;
  n.p2 = p2;
  n.aux0 = aux0;
  n.aux1 = aux1;
  n.requires_grad = (p0 >= 0 && nodes_[p0].requires_grad) ||
                    (p1 >= 0 && nodes_[p1].requires_grad) ||
                    (p2 >= 0 && nodes_[p2].requires_grad);
  return push(std::move(n));
}

Value Tape::make_sink(Op op, Mat value, int p0, double aux0, double aux1) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.p0 = p0;
  n.aux0 = aux0;
  n.aux1 = aux1;
  n.requires_grad = false;
  return push(std::move(n));
}

Value Tape::input(Mat value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.op = Op::kInput;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Value Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  n.op = Op::kConstant;
  return push(std::move(n));
}

Value Tape::detach(Value v) { return constant(v.mat()); }

void Tape::check_same_shape(const char* op, Value x, Value y) const {
  const Mat& a = x.mat();
  const Mat& b = y.mat();
  if (a.rows() != b.rows() || a.cols() != b.cols())
    fail(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// ---------------------------------------------------------------------------
// Tape: op builders

Value Tape::add(Value x, Value y) {
  check_same_shape("add", x, y);
  return make(Op::kAdd, x.mat() + y.mat(), x.id(), y.id());
}

Value Tape::sub(Value x, Value y) {
  check_same_shape("sub", x, y);
  return make(Op::kSub, x.mat() - y.mat(), x.id(), y.id());
}

Value Tape::mul(Value x, Value y) {
  check_same_shape("mul", x, y);
  return make(Op::kMul, x.mat().cwiseProduct(y.mat()), x.id(), y.id());
}

Value Tape::div(Value x, Value y) {
  check_same_shape("div", x, y);
  return make(Op::kDiv, x.mat().cwiseQuotient(y.mat()), x.id(), y.id());
}

Value Tape::neg(Value x) { return make(Op::kNeg, -x.mat(), x.id(), -1); }

Value Tape::scalar_mul(Value x, double c) {
  return make(Op::kScalarMul, c * x.mat(), x.id(), -1, c);
}

Value Tape::scalar_add(Value x, double c) {
  return make(Op::kScalarAdd, (x.mat().array() + c).matrix(), x.id(), -1, c);
}

Value Tape::matmul(Value a, Value b) {
  const Mat& x = a.mat();
  const Mat& y = b.mat();
  if (x.cols() != y.rows())
    fail("matmul: inner dimensions differ, " + shape_str(x) + " * " + shape_str(y));
  Mat out(x.rows(), y.cols());
  out.noalias() = x * y;
  return make(Op::kMatMul, std::move(out), a.id(), b.id());
}

Value Tape::matmul_nt(Value a, Value b) {
  const Mat& x = a.mat();
  const Mat& y = b.mat();
  if (x.cols() != y.cols())
    fail("matmul_nt: inner dimensions differ, " + shape_str(x) + " * " + shape_str(y) + "^T");
  Mat out(x.rows(), y.rows());
  out.noalias() = x * y.transpose();
  return make(Op::kMatMulNT, std::move(out), a.id(), b.id());
}

Value Tape::matmul_tn(Value a, Value b) {
  const Mat& x = a.mat();
  const Mat& y = b.mat();
  if (x.rows() != y.rows())
    fail("matmul_tn: inner dimensions differ, " + shape_str(x) + "^T * " + shape_str(y));
  Mat out(x.cols(), y.cols());
  out.noalias() = x.transpose() * y;
  return make(Op::kMatMulTN, std::move(out), a.id(), b.id());
}

Value Tape::transpose(Value x) { return make(Op::kTranspose, x.mat().transpose(), x.id(), -1); }

Value Tape::row_broadcast(Value row, Eigen::Index rows) {
  if (row.rows() != 1) fail("row_broadcast: expected 1xn row vector, got " + shape_str(row.mat()));
  return make(Op::kRowBcast, row.mat().replicate(rows, 1), row.id(), -1,
              static_cast<double>(rows));
}

Value Tape::col_broadcast(Value col, Eigen::Index cols) {
  if (col.cols() != 1) fail("col_broadcast: expected mx1 column vector, got " + shape_str(col.mat()));
  return make(Op::kColBcast, col.mat().replicate(1, cols), col.id(), -1,
              static_cast<double>(cols));
}

Value Tape::fill(Value s, Eigen::Index rows, Eigen::Index cols) {
  return make(Op::kFill, Mat::Constant(rows, cols, s.scalar()), s.id(), -1,
              static_cast<double>(rows), static_cast<double>(cols));
}

Value Tape::sum(Value x) {
  Mat m(1, 1);
  m(0, 0) = x.mat().sum();
  return make(Op::kSum, std::move(m), x.id(), -1);
}

Value Tape::mean(Value x) {
  Mat m(1, 1);
  m(0, 0) = x.mat().mean();
  return make(Op::kMean, std::move(m), x.id(), -1);
}

Value Tape::row_sum(Value x) {
  return make(Op::kRowSum, x.mat().rowwise().sum(), x.id(), -1);
}

Value Tape::col_sum(Value x) {
  return make(Op::kColSum, x.mat().colwise().sum(), x.id(), -1);
}

Value Tape::relu(Value x) { return make(Op::kRelu, x.mat().cwiseMax(0.0), x.id(), -1); }

Value Tape::tanh(Value x) {
  return make(Op::kTanh, x.mat().array().tanh().matrix(), x.id(), -1);
}

Value Tape::square(Value x) {
  return make(Op::kSquare, x.mat().array().square().matrix(), x.id(), -1);
}

Value Tape::exp(Value x) { return make(Op::kExp, x.mat().array().exp().matrix(), x.id(), -1); }

Value Tape::sqrt(Value x) { return make(Op::kSqrt, x.mat().array().sqrt().matrix(), x.id(), -1); }

Value Tape::clip(Value x, double lo, double hi) {
  if (!(lo <= hi)) fail("clip: lo > hi");
  return make(Op::kClip, x.mat().cwiseMax(lo).cwiseMin(hi), x.id(), -1, lo, hi);
}

Value Tape::hconcat(Value a, Value b) {
  if (a.rows() != b.rows())
    fail("hconcat: row counts differ, " + shape_str(a.mat()) + " vs " + shape_str(b.mat()));
  Mat out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.mat();
  out.rightCols(b.cols()) = b.mat();
  return make(Op::kHConcat2, std::move(out), a.id(), b.id());
}

Value Tape::hconcat(std::span<const Value> parts) {
  if (parts.empty()) fail("hconcat: no parts");
  Value acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = hconcat(acc, parts[i]);
  return acc;
}

Value Tape::hslice(Value x, Eigen::Index col0, Eigen::Index width) {
  if (col0 < 0 || width <= 0 || col0 + width > x.cols())
    fail("hslice: range [" + std::to_string(col0) + ", " + std::to_string(col0 + width) +
         ") out of bounds for " + shape_str(x.mat()));
  return make(Op::kHSlice, x.mat().middleCols(col0, width), x.id(), -1,
              static_cast<double>(col0), static_cast<double>(width));
}

Value Tape::softmax_rows(Value x) {
  Mat out = x.mat();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    Eigen::ArrayXd row = out.row(r).transpose().array();
    row -= row.maxCoeff();
    row = row.exp();
    out.row(r) = (row / row.sum()).matrix().transpose();
  }
  return make(Op::kSoftmax, std::move(out), x.id(), -1);
}

Value Tape::row_max(Value x) {
  return make(Op::kRowMax, x.mat().rowwise().maxCoeff(), x.id(), -1);
}

Value Tape::select_cols(Value x, std::vector<int> idx) {
  const Mat& m = x.mat();
  if (static_cast<Eigen::Index>(idx.size()) != m.rows())
    fail("select_cols: need one index per row");
  Mat out(m.rows(), 1);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    int c = idx[r];
    if (c < 0 || c >= m.cols()) fail("select_cols: index out of range");
    out(r, 0) = m(r, c);
  }
  Node n;
  n.value = std::move(out);
  n.op = Op::kSelectCols;
  n.p0 = x.id();
  n.aux0 = static_cast<double>(m.cols());
  n.idx = std::move(idx);
  n.requires_grad = nodes_[x.id()].requires_grad;
  return push(std::move(n));
}

Value Tape::scatter_cols(Value v, std::vector<int> idx, Eigen::Index cols) {
  const Mat& m = v.mat();
  if (m.cols() != 1) fail("scatter_cols: expected mx1 column vector");
  if (static_cast<Eigen::Index>(idx.size()) != m.rows())
    fail("scatter_cols: need one index per row");
  Mat out = Mat::Zero(m.rows(), cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    int c = idx[r];
    if (c < 0 || c >= cols) fail("scatter_cols: index out of range");
    out(r, c) = m(r, 0);
  }
  Node n;
  n.value = std::move(out);
  n.op = Op::kScatterCols;
  n.p0 = v.id();
  n.aux0 = static_cast<double>(cols);
  n.idx = std::move(idx);
  n.requires_grad = nodes_[v.id()].requires_grad;
  return push(std::move(n));
}

Value Tape::huber(Value x, double delta) {
  if (delta <= 0) fail("huber: delta must be positive");
  Mat out = x.mat();
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    double v = out.data()[i];
    double av = std::abs(v);
    out.data()[i] = av <= delta ? 0.5 * v * v : delta * (av - 0.5 * delta);
  }
  return make(Op::kHuber, std::move(out), x.id(), -1, delta);
}

Value Tape::affine(Value x, Value w, Value b) {
  if (x.cols() != w.cols())
    fail("affine: input width " + shape_str(x.mat()) + " does not match weight " +
         shape_str(w.mat()));
  if (b.cols() != 1 || b.rows() != w.rows())
    fail("affine: bias " + shape_str(b.mat()) + " does not match weight " + shape_str(w.mat()));
  Mat out(x.rows(), w.rows());
  out.noalias() = x.mat() * w.mat().transpose();
  out.rowwise() += b.mat().col(0).transpose();
  return make(Op::kAffine, std::move(out), x.id(), w.id(), 0.0, 0.0, b.id());
}

// ---------------------------------------------------------------------------
// Reverse pass

void Tape::accumulate(std::vector<int>& adj, int parent, Value contribution) {
  if (adj[parent] < 0) {
    adj[parent] = contribution.id();
  } else {
    adj[parent] = add(Value(this, adj[parent]), contribution).id();
  }
}

void Tape::backward_node(int id, int adjoint_id, std::vector<int>& adj) {
  const Node& n = nodes_[id];
  Value a(this, adjoint_id);
  Value self(this, id);
  const int p0 = n.p0;
  const int p1 = n.p1;
  const bool g0 = p0 >= 0 && nodes_[p0].requires_grad;
  const bool g1 = p1 >= 0 && nodes_[p1].requires_grad;
  Value x0(this, p0), x1(this, p1);

  switch (n.op) {
    case Op::kInput:
    case Op::kConstant:
    case Op::kReluMask:
    case Op::kClipMask:
    case Op::kRowMaxMask:
      return;  // leaves and gradient sinks
    case Op::kAdd:
      if (g0) accumulate(adj, p0, a);
      if (g1) accumulate(adj, p1, a);
      return;
    case Op::kSub:
      if (g0) accumulate(adj, p0, a);
      if (g1) accumulate(adj, p1, neg(a));
      return;
    case Op::kMul:
      if (g0) accumulate(adj, p0, mul(a, x1));
      if (g1) accumulate(adj, p1, mul(a, x0));
      return;
    case Op::kDiv:
      if (g0) accumulate(adj, p0, div(a, x1));
      if (g1) accumulate(adj, p1, neg(mul(a, div(self, x1))));
      return;
    case Op::kNeg:
      if (g0) accumulate(adj, p0, neg(a));
      return;
    case Op::kScalarMul:
      if (g0) accumulate(adj, p0, scalar_mul(a, n.aux0));
      return;
    case Op::kScalarAdd:
      if (g0) accumulate(adj, p0, a);
      return;
    case Op::kMatMul:
      if (g0) accumulate(adj, p0, matmul_nt(a, x1));
      if (g1) accumulate(adj, p1, matmul_tn(x0, a));
      return;
    case Op::kMatMulNT:  // C = A B^T
      if (g0) accumulate(adj, p0, matmul(a, x1));
      if (g1) accumulate(adj, p1, matmul_tn(a, x0));
      return;
    case Op::kMatMulTN:  // C = A^T B
      if (g0) accumulate(adj, p0, matmul_nt(x1, a));
      if (g1) accumulate(adj, p1, matmul(x0, a));
      return;
    case Op::kAffine: {
      if (g0) accumulate(adj, p0, matmul(a, x1));
      if (g1) accumulate(adj, p1, matmul_tn(a, x0));
      const int p2 = n.p2;
      if (p2 >= 0 && nodes_[p2].requires_grad)
        accumulate(adj, p2, transpose(col_sum(a)));
      return;
    }
    case Op::kTranspose:
      if (g0) accumulate(adj, p0, transpose(a));
      return;
    case Op::kRowBcast:
      if (g0) accumulate(adj, p0, col_sum(a));
      return;
    case Op::kColBcast:
      if (g0) accumulate(adj, p0, row_sum(a));
      return;
    case Op::kFill:
      if (g0) accumulate(adj, p0, sum(a));
      return;
    case Op::kSum:
      if (g0) accumulate(adj, p0, fill(a, x0.rows(), x0.cols()));
      return;
    case Op::kMean:
      if (g0)
        accumulate(adj, p0,
                   scalar_mul(fill(a, x0.rows(), x0.cols()),
                              1.0 / static_cast<double>(x0.rows() * x0.cols())));
      return;
    case Op::kRowSum:
      if (g0) accumulate(adj, p0, col_broadcast(a, x0.cols()));
      return;
    case Op::kColSum:
      if (g0) accumulate(adj, p0, row_broadcast(a, x0.rows()));
      return;
    case Op::kRelu: {
      if (!g0) return;
      Mat mask = (x0.mat().array() > 0.0).cast<double>().matrix();
      Value m = make_sink(Op::kReluMask, std::move(mask), p0);
      accumulate(adj, p0, mul(a, m));
      return;
    }
    case Op::kTanh:
      if (g0) accumulate(adj, p0, mul(a, scalar_add(neg(square(self)), 1.0)));
      return;
    case Op::kSquare:
      if (g0) accumulate(adj, p0, mul(a, scalar_mul(x0, 2.0)));
      return;
    case Op::kExp:
      if (g0) accumulate(adj, p0, mul(a, self));
      return;
    case Op::kSqrt:
      if (g0) accumulate(adj, p0, div(a, scalar_mul(self, 2.0)));
      return;
    case Op::kClip: {
      if (!g0) return;
      Mat mask =
          ((x0.mat().array() > n.aux0) && (x0.mat().array() < n.aux1)).cast<double>().matrix();
      Value m = make_sink(Op::kClipMask, std::move(mask), p0, n.aux0, n.aux1);
      accumulate(adj, p0, mul(a, m));
      return;
    }
    case Op::kHConcat2:
      if (g0) accumulate(adj, p0, hslice(a, 0, x0.cols()));
      if (g1) accumulate(adj, p1, hslice(a, x0.cols(), x1.cols()));
      return;
    case Op::kHSlice: {
      if (!g0) return;
      // pad the adjoint back into the parent's column range
      Eigen::Index col0 = static_cast<Eigen::Index>(n.aux0);
      Mat out = Mat::Zero(x0.rows(), x0.cols());
      out.middleCols(col0, a.cols()) = a.mat();
      Value padded =
          make(Op::kHPad, std::move(out), adjoint_id, -1, n.aux0, static_cast<double>(x0.cols()));
      accumulate(adj, p0, padded);
      return;
    }
    case Op::kHPad:
      if (g0) accumulate(adj, p0, hslice(a, static_cast<Eigen::Index>(n.aux0), x0.cols()));
      return;
    case Op::kSoftmax: {
      if (!g0) return;
      Value t = row_sum(mul(a, self));
      accumulate(adj, p0, mul(self, sub(a, col_broadcast(t, self.cols()))));
      return;
    }
    case Op::kRowMax: {
      if (!g0) return;
      const Mat& xm = x0.mat();
      Mat mask = Mat::Zero(xm.rows(), xm.cols());
      for (Eigen::Index r = 0; r < xm.rows(); ++r) {
        Eigen::Index c;
        xm.row(r).maxCoeff(&c);
        mask(r, c) = 1.0;
      }
      Value m = make_sink(Op::kRowMaxMask, std::move(mask), p0);
      accumulate(adj, p0, mul(col_broadcast(a, xm.cols()), m));
      return;
    }
    case Op::kSelectCols:
      if (g0) accumulate(adj, p0, scatter_cols(a, n.idx, x0.cols()));
      return;
    case Op::kScatterCols:
      if (g0) accumulate(adj, p0, select_cols(a, n.idx));
      return;
    case Op::kHuber:
      if (g0) accumulate(adj, p0, mul(a, clip(x0, -n.aux0, n.aux0)));
      return;
  }
}

GradMap Tape::grad(Value target, std::span<const Value> wrt, bool create_graph) {
  if (target.tape() != this) fail("grad: target node not on this tape");
  if (target.rows() != 1 || target.cols() != 1)
    fail("grad: target must be scalar, got " + shape_str(target.mat()));
  for (Value v : wrt)
    if (v.tape() != this || v.id() < 0 || v.id() >= static_cast<int>(nodes_.size()))
      fail("grad: wrt node not on this tape");

  const int tid = target.id();

  // nodes that can route gradient from the target to some grad-requiring leaf
  std::vector<char> reach(tid + 1, 0);
  if (nodes_[tid].requires_grad) {
    std::vector<int> stack{tid};
    reach[tid] = 1;
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      const Node& n = nodes_[id];
      for (int p : {n.p0, n.p1, n.p2}) {
        if (p >= 0 && !reach[p] && nodes_[p].requires_grad) {
          reach[p] = 1;
          stack.push_back(p);
        }
      }
    }
  }

  std::vector<int> adj(tid + 1, -1);
  if (reach[tid]) {
    adj[tid] = constant(1.0).id();
    for (int id = tid; id >= 0; --id) {
      if (!reach[id] || adj[id] < 0) continue;
      backward_node(id, adj[id], adj);
    }
  }

  GradMap out;
  for (Value v : wrt) {
    int a = v.id() <= tid ? adj[v.id()] : -1;
    if (a < 0) continue;
    out.insert(v.id(), create_graph ? Value(this, a) : detach(Value(this, a)));
  }
  return out;
}

// ---------------------------------------------------------------------------

Value operator+(Value x, Value y) { return x.tape()->add(x, y); }
Value operator-(Value x, Value y) { return x.tape()->sub(x, y); }
Value operator*(Value x, Value y) { return x.tape()->mul(x, y); }
Value operator-(Value x) { return x.tape()->neg(x); }

double finite_diff_check(const std::function<double(const Eigen::VectorXd&)>& f,
                         const Eigen::VectorXd& analytic_grad, const Eigen::VectorXd& point,
                         double eps) {
  if (eps <= 0) fail("finite_diff_check: eps must be positive");
  if (analytic_grad.size() != point.size())
    fail("finite_diff_check: gradient/point size mismatch");
  double worst = 0.0;
  Eigen::VectorXd x = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    x[i] = point[i] + eps;
    const double fp = f(x);
    x[i] = point[i] - eps;
    const double fm = f(x);
    x[i] = point[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_check: f evaluated non-finite");
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic_grad[i] - numeric) /
                       std::max(1.0, std::abs(analytic_grad[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace reengage::ad
