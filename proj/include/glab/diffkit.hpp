// Forward mode in the 2-D input nested inside reverse mode in the parameters.
//
// DualScalar carries d/dx and d/dy alongside a value and is used for
// straightforward single-point evaluation. GradTape records batched,
// layer-level operations; every tape node holds up to three "lanes"
// (value, d/dx, d/dy) laid side by side as column blocks, so a loss built
// from input gradients can be differentiated with respect to parameters,
// mixed second derivatives included.
#pragma once

#include "glab/common.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace glab::diffkit {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;
// Contiguous column range of a tape node (one lane).
using ConstLane = Eigen::Block<const Matrix, Eigen::Dynamic, Eigen::Dynamic, true>;

// -- closed-form SiLU derivatives ---------------------------------------------

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double silu(double z) { return z * sigmoid(z); }
inline double silu_d1(double z) {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}
inline double silu_d2(double z) {
  const double s = sigmoid(z);
  return s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s));
}

// -- DualScalar ---------------------------------------------------------------

struct DualScalar {
  double value = 0.0;
  std::array<double, 2> tangent{0.0, 0.0};

  static DualScalar constant(double v) { return {v, {0.0, 0.0}}; }
  static DualScalar variable(double v, int axis) {
    DualScalar d{v, {0.0, 0.0}};
    d.tangent[axis] = 1.0;
    return d;
  }
};

inline DualScalar operator+(const DualScalar& a, const DualScalar& b) {
  return {a.value + b.value, {a.tangent[0] + b.tangent[0], a.tangent[1] + b.tangent[1]}};
}
inline DualScalar operator-(const DualScalar& a, const DualScalar& b) {
  return {a.value - b.value, {a.tangent[0] - b.tangent[0], a.tangent[1] - b.tangent[1]}};
}
inline DualScalar operator-(const DualScalar& a) { return {-a.value, {-a.tangent[0], -a.tangent[1]}}; }
inline DualScalar operator*(const DualScalar& a, const DualScalar& b) {
  return {a.value * b.value,
          {a.tangent[0] * b.value + a.value * b.tangent[0], a.tangent[1] * b.value + a.value * b.tangent[1]}};
}
inline DualScalar operator*(double s, const DualScalar& a) { return {s * a.value, {s * a.tangent[0], s * a.tangent[1]}}; }
inline DualScalar operator*(const DualScalar& a, double s) { return s * a; }
inline DualScalar operator+(const DualScalar& a, double s) { return {a.value + s, a.tangent}; }
inline DualScalar& operator+=(DualScalar& a, const DualScalar& b) { return a = a + b; }

inline DualScalar square(const DualScalar& a) {
  return {a.value * a.value, {2.0 * a.value * a.tangent[0], 2.0 * a.value * a.tangent[1]}};
}
inline DualScalar silu(const DualScalar& a) {
  const double d = silu_d1(a.value);
  return {silu(a.value), {d * a.tangent[0], d * a.tangent[1]}};
}

struct InputGradient {
  double value = 0.0;
  Vec2 grad = Vec2::Zero();
};

// Exact value and gradient of a scalar function of a 2-vector. `eval` receives
// std::array<DualScalar, 2> and returns a DualScalar.
template <class F>
InputGradient input_gradient(F&& eval, const Vec2& x) {
  const std::array<DualScalar, 2> xs{DualScalar::variable(x.x(), 0), DualScalar::variable(x.y(), 1)};
  const DualScalar r = eval(xs);
  return {r.value, Vec2(r.tangent[0], r.tangent[1])};
}

// -- parameters ---------------------------------------------------------------

struct ParamBlockInfo {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  std::size_t offset = 0;
  bool row_normalized = false;
};

// Flat parameter storage partitioned into named column-major blocks.
class ParamSet {
 public:
  int add_block(std::string name, Index rows, Index cols, bool row_normalized = false);

  Eigen::Map<Matrix> block(int id);
  Eigen::Map<const Matrix> block(int id) const;
  double scalar(int id) const { return flat_[blocks_.at(id).offset]; }

  std::span<double> flat() { return flat_; }
  std::span<const double> flat() const { return flat_; }
  std::size_t size() const { return flat_.size(); }
  const std::vector<ParamBlockInfo>& blocks() const { return blocks_; }
  int find(std::string_view name) const;  // -1 when absent

  // Rescales every row of every row-normalized block to unit Euclidean norm.
  void normalize_rows();

  bool same_layout(const ParamSet& other) const;

 private:
  std::vector<double> flat_;
  std::vector<ParamBlockInfo> blocks_;
};

// -- tape ---------------------------------------------------------------------

struct NodeId {
  int index = -1;
};

enum class Op {
  Input,         // leaf with value and optional input tangents; constant in the parameters
  Affine,        // y = W_hat x (+ bias table column per sample on the value lane)
  Silu,          // y = gain * silu(x)
  Square,        // y = x .* x
  Multiply,      // y = a .* b
  SumRows,       // 1 x cols, per lane
  SumCols,       // rows x 1, per lane
  Scale,         // y = c * x
  ScaleColumns,  // y(:, j) = s(j) * x(:, j) on every lane
  ScaleByParam,  // y = g * x with g a 1x1 parameter block
  Add,           // y = alpha a + beta b
  StopGradient,  // identity forward, zero pullback
  Tangent,       // lane-1 node holding d/dx (lane 0) or d/dy (lane 1) of its operand
};

// Records a computation over a batch of `cols` samples. Single-use and
// single-threaded; build one tape per batch shard.
class GradTape {
 public:
  explicit GradTape(const ParamSet& params);

  // Leaves. With tangents, the node has three lanes.
  NodeId input(Matrix value, const Matrix& tan_x, const Matrix& tan_y);
  NodeId constant(Matrix value);

  NodeId affine(int weight_block, NodeId x);
  NodeId affine(int weight_block, NodeId x, int bias_block, std::vector<int> bias_columns);
  NodeId silu(NodeId x, double gain = 1.0);
  NodeId square(NodeId x);
  NodeId multiply(NodeId a, NodeId b);
  NodeId sum_rows(NodeId x);
  NodeId sum_cols(NodeId x);
  NodeId scale(NodeId x, double c);
  NodeId scale_columns(NodeId x, RowVector s);
  NodeId scale_by_param(NodeId x, int scalar_block);
  NodeId add(NodeId a, NodeId b, double alpha = 1.0, double beta = 1.0);
  NodeId stop_gradient(NodeId x);
  NodeId tangent(NodeId x, int axis);

  // Lane 0 of a node.
  ConstLane value(NodeId id) const;
  // d/dx (axis 0) or d/dy (axis 1) lane of a three-lane node.
  ConstLane tangent_value(NodeId id, int axis) const;
  int lanes(NodeId id) const { return nodes_.at(id.index).lanes; }
  std::size_t size() const { return nodes_.size(); }

  // Recomputes every node from the leaves; true when all values match bitwise.
  bool replay() const;

  // d loss / d theta in the ParamSet's flat layout. `loss` must be a 1x1 one-lane node.
  std::vector<double> param_gradient(NodeId loss, bool verify_replay = false);

  // Nodes visited by the most recent backward pass.
  std::size_t last_visit_count() const { return visits_; }

 private:
  struct Node {
    Op op = Op::Input;
    int a = -1;
    int b = -1;
    int param = -1;
    int bias = -1;
    double c0 = 1.0;
    double c1 = 1.0;
    int lanes = 1;
    Index rows = 0;
    Index cols = 0;
    std::vector<int> columns;
    RowVector row;
    Matrix value;
  };

  NodeId push(Node n);
  const Node& node(NodeId id) const;
  Matrix compute(const Node& n, const std::vector<Node>& nodes) const;
  const Matrix& effective_weight(int block) const;

  const ParamSet& params_;
  std::vector<Node> nodes_;
  mutable std::vector<Matrix> normalized_;  // per block, lazily
  mutable std::vector<Eigen::VectorXd> row_norms_;
  std::size_t visits_ = 0;
};

}  // namespace glab::diffkit
