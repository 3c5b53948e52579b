#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace reengage::ad {

using Mat = Eigen::MatrixXd;

/// Operation tag of a tape node. Every rule in Tape::grad emits its backward
/// pass using these same ops, which is what makes the returned gradients
/// differentiable again (the double backpropagation the gradient-matching
/// losses rely on).
enum class Op : std::uint8_t {
  kInput,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kScalarMul,   // aux0 * x
  kScalarAdd,   // x + aux0
  kMatMul,
  kMatMulNT,    // A * B^T without materializing the transpose
  kMatMulTN,    // A^T * B
  kAffine,      // x * W^T + row-broadcast bias; parents (x, W, b)
  kTranspose,
  kRowBcast,    // (1 x n) -> (aux0 x n), rows repeated
  kColBcast,    // (m x 1) -> (m x aux0), cols repeated
  kFill,        // (1 x 1) -> (aux0 x aux1)
  kSum,         // full reduction to 1 x 1
  kMean,        // full reduction to 1 x 1
  kRowSum,      // (m x n) -> (m x 1)
  kColSum,      // (m x n) -> (1 x n)
  kRelu,
  kReluMask,    // 1{x > 0}; gradient sink (derivative taken as 0 at x = 0)
  kTanh,
  kSquare,
  kExp,
  kSqrt,
  kClip,        // clamp(x, aux0, aux1)
  kClipMask,    // 1{aux0 < x < aux1}; gradient sink
  kHConcat2,    // [A | B]
  kHSlice,      // columns [aux0, aux0 + aux1)
  kHPad,        // (m x w) placed at column aux0 of an m x aux1 zero matrix
  kSoftmax,     // row-wise
  kRowMax,      // (m x n) -> (m x 1)
  kRowMaxMask,  // one-hot rows marking the first argmax; gradient sink
  kSelectCols,  // x(i, idx[i]) -> (m x 1)
  kScatterCols, // (m x 1) -> (m x aux0) zeros with v at idx[i]
  kHuber,       // elementwise Huber with delta aux0
};

const char* op_name(Op op);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until the tape is reset.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

  const Mat& mat() const;
  double scalar() const;  // requires 1 x 1
  Eigen::Index rows() const;
  Eigen::Index cols() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Result of a reverse pass: node id -> gradient node. Nodes that the
/// differentiated scalar does not reach have no entry (their gradient is
/// identically zero).
class GradMap {
 public:
  bool contains(Value v) const { return grads_.count(v.id()) != 0; }
  Value at(Value v) const;
  /// Gradient of v, or a fresh zero node of matching shape when absent.
  Value at_or_zero(Value v) const;

  void insert(int id, Value g) { grads_.emplace(id, g); }

 private:
  std::unordered_map<int, Value> grads_;
};

/// Dynamically built computation graph over dense 64-bit matrices.
/// Scalars are 1x1, vectors are n x 1, batches are laid out rows-first
/// (one sample per row). A tape is single-threaded; rebuild (reset) it
/// per training step.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf with externally supplied value.
  Value input(Mat value, bool requires_grad);
  Value input(double value, bool requires_grad) { return input(scalar_mat(value), requires_grad); }
  /// Leaf that never receives gradient.
  Value constant(Mat value);
  Value constant(double value) { return constant(scalar_mat(value)); }

  /// Copies the node's value into a fresh constant leaf (stops gradient).
  Value detach(Value v);

  std::size_t size() const { return nodes_.size(); }
  void reset() { nodes_.clear(); }

  /// Reverse-mode gradients of a scalar target with respect to the given
  /// nodes. With create_graph the backward pass is recorded as ordinary tape
  /// ops, so the returned gradients can be differentiated again; without it
  /// the results are detached constants.
  GradMap grad(Value target, std::span<const Value> wrt, bool create_graph);
  GradMap grad(Value target, std::initializer_list<Value> wrt, bool create_graph) {
    return grad(target, std::span<const Value>(wrt.begin(), wrt.size()), create_graph);
  }

  // -- op builders ---------------------------------------------------------
  Value add(Value x, Value y);
  Value sub(Value x, Value y);
  Value mul(Value x, Value y);
  Value div(Value x, Value y);
  Value neg(Value x);
  Value scalar_mul(Value x, double c);
  Value scalar_add(Value x, double c);
  Value matmul(Value a, Value b);
  Value matmul_nt(Value a, Value b);  // A * B^T
  Value matmul_tn(Value a, Value b);  // A^T * B
  Value transpose(Value x);
  Value row_broadcast(Value row, Eigen::Index rows);
  Value col_broadcast(Value col, Eigen::Index cols);
  Value fill(Value s, Eigen::Index rows, Eigen::Index cols);
  Value sum(Value x);
  Value mean(Value x);
  Value row_sum(Value x);
  Value col_sum(Value x);
  Value relu(Value x);
  Value tanh(Value x);
  Value square(Value x);
  Value exp(Value x);
  Value sqrt(Value x);
  Value clip(Value x, double lo, double hi);
  Value hconcat(Value a, Value b);
  Value hconcat(std::span<const Value> parts);
  Value hslice(Value x, Eigen::Index col0, Eigen::Index width);
  Value softmax_rows(Value x);
  Value row_max(Value x);
  Value select_cols(Value x, std::vector<int> idx);
  Value scatter_cols(Value v, std::vector<int> idx, Eigen::Index cols);
  Value huber(Value x, double delta);

  /// x (B x in) * W^T + bias broadcast; W is (out x in), b (out x 1).
  Value affine(Value x, Value w, Value b);

  // composites
  Value dot(Value x, Value y) { return sum(mul(x, y)); }
  Value l2norm(Value x) { return sqrt(sum(square(x))); }

  const Mat& value_of(int id) const { return nodes_.at(id).value; }
  bool node_requires_grad(int id) const { return nodes_.at(id).requires_grad; }

 private:
  struct Node {
    Mat value;
    Op op = Op::kConstant;
    int p0 = -1, p1 = -1, p2 = -1;
    double aux0 = 0.0, aux1 = 0.0;
    std::vector<int> idx;  // column indices for select/scatter ops
    bool requires_grad = false;
  };

  static Mat scalar_mat(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return m;
  }

  Value push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Value(this, static_cast<int>(nodes_.size()) - 1);
  }
  Value make(Op op, Mat value, int p0, int p1, double aux0 = 0.0, double aux1 = 0.0, int p2 = -1);
  Value make_sink(Op op, Mat value, int p0, double aux0 = 0.0, double aux1 = 0.0);

  const Node& node(int id) const;
  void check_same_shape(const char* op, Value x, Value y) const;

  // appends the backward ops of node `id` given its adjoint, accumulating
  // into adj[] for parents that require grad
  void backward_node(int id, int adjoint_id, std::vector<int>& adj);
  void accumulate(std::vector<int>& adj, int parent, Value contribution);

  std::vector<Node> nodes_;
};

// Free operators mirroring the tape builders (both operands on one tape).
Value operator+(Value x, Value y);
Value operator-(Value x, Value y);
Value operator*(Value x, Value y);
Value operator-(Value x);

/// Max over coordinates of |analytic - numeric| / max(1, |analytic|), where
/// numeric is the central finite difference of f at `point` with step eps.
/// Throws if f evaluates non-finite.
double finite_diff_check(const std::function<double(const Eigen::VectorXd&)>& f,
                         const Eigen::VectorXd& analytic_grad, const Eigen::VectorXd& point,
                         double eps = 1e-5);

}  // namespace reengage::ad
