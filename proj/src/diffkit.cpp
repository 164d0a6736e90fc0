#include "glab/diffkit.hpp"

#include <algorithm>
#include <cmath>

namespace glab::diffkit {

// -- ParamSet -----------------------------------------------------------------

int ParamSet::add_block(std::string name, Index rows, Index cols, bool row_normalized) {
  if (rows <= 0 || cols <= 0) throw ContractError("parameter block '" + name + "' has an empty shape");
  if (find(name) >= 0) throw ContractError("duplicate parameter block '" + name + "'");
  ParamBlockInfo info{std::move(name), rows, cols, flat_.size(), row_normalized};
  flat_.resize(flat_.size() + static_cast<std::size_t>(rows * cols), 0.0);
  blocks_.push_back(std::move(info));
  return static_cast<int>(blocks_.size()) - 1;
}

Eigen::Map<Matrix> ParamSet::block(int id) {
  const auto& b = blocks_.at(id);
  return {flat_.data() + b.offset, b.rows, b.cols};
}

Eigen::Map<const Matrix> ParamSet::block(int id) const {
  const auto& b = blocks_.at(id);
  return {flat_.data() + b.offset, b.rows, b.cols};
}

int ParamSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

void ParamSet::normalize_rows() {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (!blocks_[i].row_normalized) continue;
    auto w = block(static_cast<int>(i));
    for (Index r = 0; r < w.rows(); ++r) {
      const double norm = w.row(r).norm();
      if (norm > 0.0) w.row(r) /= norm;
    }
  }
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (blocks_.size() != other.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& a = blocks_[i];
    const auto& b = other.blocks_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.row_normalized != b.row_normalized) return false;
  }
  return true;
}

// -- GradTape -----------------------------------------------------------------

namespace {

auto lane(Matrix& m, Index cols, int k) { return m.middleCols(k * cols, cols); }
auto lane(const Matrix& m, Index cols, int k) { return m.middleCols(k * cols, cols); }

}  // namespace

GradTape::GradTape(const ParamSet& params)
    : params_(params), normalized_(params.blocks().size()), row_norms_(params.blocks().size()) {}

const GradTape::Node& GradTape::node(NodeId id) const {
  if (id.index < 0 || id.index >= static_cast<int>(nodes_.size())) throw ContractError("invalid tape node id");
  return nodes_[id.index];
}

const Matrix& GradTape::effective_weight(int block) const {
  Matrix& cached = normalized_.at(block);
  if (cached.size() == 0) {
    const auto w = params_.block(block);
    cached = w;
    Eigen::VectorXd& norms = row_norms_[block];
    norms.resize(w.rows());
    if (params_.blocks()[block].row_normalized) {
      for (Index r = 0; r < w.rows(); ++r) {
        norms(r) = w.row(r).norm();
        if (!(norms(r) > 0.0)) throw NumericalError("weight row with zero norm in block " + params_.blocks()[block].name);
        cached.row(r) /= norms(r);
      }
    } else {
      norms.setOnes();
    }
  }
  return cached;
}

NodeId GradTape::push(Node n) {
  n.value = compute(n, nodes_);
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

NodeId GradTape::input(Matrix value, const Matrix& tan_x, const Matrix& tan_y) {
  if (tan_x.rows() != value.rows() || tan_x.cols() != value.cols() || tan_y.rows() != value.rows() ||
      tan_y.cols() != value.cols()) {
    throw ContractError("input: tangent shape differs from value shape");
  }
  Node n;
  n.op = Op::Input;
  n.lanes = 3;
  n.rows = value.rows();
  n.cols = value.cols();
  n.value.resize(n.rows, 3 * n.cols);
  n.value << value, tan_x, tan_y;
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

NodeId GradTape::constant(Matrix value) {
  Node n;
  n.op = Op::Input;
  n.lanes = 1;
  n.rows = value.rows();
  n.cols = value.cols();
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

NodeId GradTape::affine(int weight_block, NodeId x) { return affine(weight_block, x, -1, {}); }

NodeId GradTape::affine(int weight_block, NodeId x, int bias_block, std::vector<int> bias_columns) {
  const Node& in = node(x);
  const auto& blocks = params_.blocks();
  if (weight_block < 0 || weight_block >= static_cast<int>(blocks.size())) throw ContractError("affine: bad weight block");
  if (blocks[weight_block].cols != in.rows) throw ContractError("affine: weight columns do not match input rows");
  Node n;
  n.op = Op::Affine;
  n.a = x.index;
  n.param = weight_block;
  n.lanes = in.lanes;
  n.rows = blocks[weight_block].rows;
  n.cols = in.cols;
  if (bias_block >= 0) {
    if (bias_block >= static_cast<int>(blocks.size()) || blocks[bias_block].rows != n.rows) {
      throw ContractError("affine: bias table rows do not match output rows");
    }
    if (static_cast<Index>(bias_columns.size()) != n.cols) throw ContractError("affine: one bias column per sample");
    for (int c : bias_columns) {
      if (c < 0 || c >= blocks[bias_block].cols) throw ContractError("affine: bias column out of range");
    }
    n.bias = bias_block;
    n.columns = std::move(bias_columns);
  }
  return push(std::move(n));
}

NodeId GradTape::silu(NodeId x, double gain) {
  const Node& in = node(x);
  Node n;
  n.op = Op::Silu;
  n.a = x.index;
  n.c0 = gain;
  n.lanes = in.lanes;
  n.rows = in.rows;
  n.cols = in.cols;
  return push(std::move(n));
}

NodeId GradTape::square(NodeId x) {
  const Node& in = node(x);
  Node n;
  n.op = Op::Square;
  n.a = x.index;
  n.lanes = in.lanes;
  n.rows = in.rows;
  n.cols = in.cols;
  return push(std::move(n));
}

NodeId GradTape::multiply(NodeId a, NodeId b) {
  const Node& l = node(a);
  const Node& r = node(b);
  if (l.rows != r.rows || l.cols != r.cols) throw ContractError("multiply: shape mismatch");
  Node n;
  n.op = Op::Multiply;
  n.a = a.index;
  n.b = b.index;
  n.lanes = std::max(l.lanes, r.lanes);
  n.rows = l.rows;
  n.cols = l.cols;
  return push(std::move(n));
}

NodeId GradTape::sum_rows(NodeId x) {
  const Node& in = node(x);
  Node n;
  n.op = Op::SumRows;
  n.a = x.index;
  n.lanes = in.lanes;
  n.rows = 1;
  n.cols = in.cols;
  return push(std::move(n));
}

NodeId GradTape::sum_cols(NodeId x) {
  const Node& in = node(x);
  Node n;
  n.op = Op::SumCols;
  n.a = x.index;
  n.lanes = in.lanes;
  n.rows = in.rows;
  n.cols = 1;
  return push(std::move(n));
}

NodeId GradTape::scale(NodeId x, double c) {
  const Node& in = node(x);
  Node n;
  n.op = Op::Scale;
  n.a = x.index;
  n.c0 = c;
  n.lanes = in.lanes;
  n.rows = in.rows;
  n.cols = in.cols;
  return push(std::move(n));
}

NodeId GradTape::scale_columns(NodeId x, RowVector s) {
  const Node& in = node(x);
  if (s.size() != in.cols) throw ContractError("scale_columns: one factor per column");
  Node n;
  n.op = Op::ScaleColumns;
  n.a = x.index;
  n.row = std::move(s);
  n.lanes = in.lanes;
  n.rows = in.rows;
  n.cols = in.cols;
  return push(std::move(n));
}

NodeId GradTape::scale_by_param(NodeId x, int scalar_block) {
  const Node& in = node(x);
  const auto& blocks = params_.blocks();
  if (scalar_block < 0 || scalar_block >= static_cast<int>(blocks.size()) || blocks[scalar_block].rows != 1 ||
      blocks[scalar_block].cols != 1) {
    throw ContractError("scale_by_param: block must be 1x1");
  }
  Node n;
  n.op = Op::ScaleByParam;
  n.a = x.index;
  n.param = scalar_block;
  n.lanes = in.lanes;
  n.rows = in.rows;
  n.cols = in.cols;
  return push(std::move(n));
}

NodeId GradTape::add(NodeId a, NodeId b, double alpha, double beta) {
  const Node& l = node(a);
  const Node& r = node(b);
  if (l.rows != r.rows || l.cols != r.cols) throw ContractError("add: shape mismatch");
  Node n;
  n.op = Op::Add;
  n.a = a.index;
  n.b = b.index;
  n.c0 = alpha;
  n.c1 = beta;
  n.lanes = std::max(l.lanes, r.lanes);
  n.rows = l.rows;
  n.cols = l.cols;
  return push(std::move(n));
}

NodeId GradTape::stop_gradient(NodeId x) {
  const Node& in = node(x);
  Node n;
  n.op = Op::StopGradient;
  n.a = x.index;
  n.lanes = in.lanes;
  n.rows = in.rows;
  n.cols = in.cols;
  return push(std::move(n));
}

NodeId GradTape::tangent(NodeId x, int axis) {
  const Node& in = node(x);
  if (in.lanes != 3) throw ContractError("tangent: operand carries no input tangents");
  if (axis != 0 && axis != 1) throw ContractError("tangent: axis must be 0 or 1");
  Node n;
  n.op = Op::Tangent;
  n.a = x.index;
  n.param = axis;
  n.lanes = 1;
  n.rows = in.rows;
  n.cols = in.cols;
  return push(std::move(n));
}

ConstLane GradTape::value(NodeId id) const {
  const Node& n = node(id);
  return lane(n.value, n.cols, 0);
}

ConstLane GradTape::tangent_value(NodeId id, int axis) const {
  const Node& n = node(id);
  if (n.lanes != 3) throw ContractError("tangent_value: node carries no input tangents");
  return lane(n.value, n.cols, axis + 1);
}

Matrix GradTape::compute(const Node& n, const std::vector<Node>& nodes) const {
  const Index cols = n.cols;
  switch (n.op) {
    case Op::Input:
      return n.value;
    case Op::Affine: {
      const Node& x = nodes[n.a];
      Matrix y = effective_weight(n.param) * x.value;
      if (n.bias >= 0) {
        const auto table = params_.block(n.bias);
        for (Index j = 0; j < cols; ++j) y.col(j) += table.col(n.columns[j]);
      }
      return y;
    }
    case Op::Silu: {
      const Node& x = nodes[n.a];
      Matrix y(n.rows, n.lanes * cols);
      const auto z = lane(x.value, cols, 0);
      lane(y, cols, 0) = n.c0 * z.unaryExpr([](double v) { return diffkit::silu(v); });
      if (n.lanes == 3) {
        const Matrix d1 = n.c0 * z.unaryExpr([](double v) { return silu_d1(v); });
        for (int k = 1; k < 3; ++k) lane(y, cols, k) = d1.cwiseProduct(lane(x.value, cols, k));
      }
      return y;
    }
    case Op::Square: {
      const Node& x = nodes[n.a];
      Matrix y(n.rows, n.lanes * cols);
      const auto z = lane(x.value, cols, 0);
      lane(y, cols, 0) = z.cwiseProduct(z);
      for (int k = 1; k < n.lanes; ++k) lane(y, cols, k) = 2.0 * z.cwiseProduct(lane(x.value, cols, k));
      return y;
    }
    case Op::Multiply: {
      const Node& l = nodes[n.a];
      const Node& r = nodes[n.b];
      Matrix y = Matrix::Zero(n.rows, n.lanes * cols);
      const auto l0 = lane(l.value, cols, 0);
      const auto r0 = lane(r.value, cols, 0);
      lane(y, cols, 0) = l0.cwiseProduct(r0);
      for (int k = 1; k < n.lanes; ++k) {
        if (l.lanes == 3) lane(y, cols, k) += lane(l.value, cols, k).cwiseProduct(r0);
        if (r.lanes == 3) lane(y, cols, k) += l0.cwiseProduct(lane(r.value, cols, k));
      }
      return y;
    }
    case Op::SumRows:
      return nodes[n.a].value.colwise().sum();
    case Op::SumCols: {
      const Node& x = nodes[n.a];
      Matrix y(n.rows, n.lanes);
      for (int k = 0; k < n.lanes; ++k) y.col(k) = lane(x.value, x.cols, k).rowwise().sum();
      return y;
    }
    case Op::Scale:
      return n.c0 * nodes[n.a].value;
    case Op::ScaleColumns: {
      const Node& x = nodes[n.a];
      Matrix y(n.rows, n.lanes * cols);
      for (int k = 0; k < n.lanes; ++k) lane(y, cols, k) = lane(x.value, cols, k) * n.row.asDiagonal();
      return y;
    }
    case Op::ScaleByParam:
      return params_.scalar(n.param) * nodes[n.a].value;
    case Op::Add: {
      const Node& l = nodes[n.a];
      const Node& r = nodes[n.b];
      if (l.lanes == r.lanes) return n.c0 * l.value + n.c1 * r.value;
      Matrix y = Matrix::Zero(n.rows, n.lanes * cols);
      y.leftCols(l.lanes * cols) += n.c0 * l.value;
      y.leftCols(r.lanes * cols) += n.c1 * r.value;
      return y;
    }
    case Op::StopGradient:
      return nodes[n.a].value;
    case Op::Tangent: {
      const Node& x = nodes[n.a];
      return lane(x.value, cols, n.param + 1);
    }
  }
  throw ContractError("unsupported tape operation");
}

bool GradTape::replay() const {
  std::vector<Node> fresh;
  fresh.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    Node copy = n;
    copy.value = compute(n, fresh);
    fresh.push_back(std::move(copy));
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Matrix& a = nodes_[i].value;
    const Matrix& b = fresh[i].value;
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (!std::equal(a.data(), a.data() + a.size(), b.data())) return false;
  }
  return true;
}

std::vector<double> GradTape::param_gradient(NodeId loss, bool verify_replay) {
  const Node& root = node(loss);
  if (root.rows != 1 || root.cols != 1 || root.lanes != 1) throw ContractError("param_gradient: loss must be a 1x1 scalar");
  if (verify_replay && !replay()) throw Error("internal consistency error: tape replay does not reproduce the forward values");

  const auto& blocks = params_.blocks();
  std::vector<Matrix> grads(blocks.size());
  auto grad_block = [&](int b) -> Matrix& {
    if (grads[b].size() == 0) grads[b] = Matrix::Zero(blocks[b].rows, blocks[b].cols);
    return grads[b];
  };

  std::vector<Matrix> adj(nodes_.size());
  auto adjoint = [&](int i) -> Matrix& {
    if (adj[i].size() == 0) adj[i] = Matrix::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
    return adj[i];
  };
  adjoint(loss.index)(0, 0) = 1.0;

  visits_ = 0;
  for (int i = loss.index; i >= 0; --i) {
    if (adj[i].size() == 0) continue;
    ++visits_;
    const Node& n = nodes_[i];
    const Matrix& g = adj[i];
    const Index cols = n.cols;
    switch (n.op) {
      case Op::Input:
      case Op::StopGradient:
        break;
      case Op::Affine: {
        const Node& x = nodes_[n.a];
        const Matrix& w = effective_weight(n.param);
        adjoint(n.a).noalias() += w.transpose() * g;
        grad_block(n.param).noalias() += g * x.value.transpose();
        if (n.bias >= 0) {
          Matrix& gb = grad_block(n.bias);
          for (Index j = 0; j < cols; ++j) gb.col(n.columns[j]) += g.col(j);
        }
        break;
      }
      case Op::Silu: {
        const Node& x = nodes_[n.a];
        Matrix& ga = adjoint(n.a);
        const auto z = lane(x.value, cols, 0);
        const Matrix d1 = n.c0 * z.unaryExpr([](double v) { return silu_d1(v); });
        lane(ga, cols, 0) += lane(g, cols, 0).cwiseProduct(d1);
        if (n.lanes == 3) {
          const Matrix d2 = n.c0 * z.unaryExpr([](double v) { return silu_d2(v); });
          for (int k = 1; k < 3; ++k) {
            lane(ga, cols, 0) += lane(g, cols, k).cwiseProduct(d2).cwiseProduct(lane(x.value, cols, k));
            lane(ga, cols, k) += lane(g, cols, k).cwiseProduct(d1);
          }
        }
        break;
      }
      case Op::Square: {
        const Node& x = nodes_[n.a];
        Matrix& ga = adjoint(n.a);
        const auto z = lane(x.value, cols, 0);
        lane(ga, cols, 0) += 2.0 * lane(g, cols, 0).cwiseProduct(z);
        for (int k = 1; k < n.lanes; ++k) {
          lane(ga, cols, 0) += 2.0 * lane(g, cols, k).cwiseProduct(lane(x.value, cols, k));
          lane(ga, cols, k) += 2.0 * lane(g, cols, k).cwiseProduct(z);
        }
        break;
      }
      case Op::Multiply: {
        const Node& l = nodes_[n.a];
        const Node& r = nodes_[n.b];
        const auto l0 = lane(l.value, cols, 0);
        const auto r0 = lane(r.value, cols, 0);
        {
          Matrix& gl = adjoint(n.a);
          lane(gl, cols, 0) += lane(g, cols, 0).cwiseProduct(r0);
          for (int k = 1; k < n.lanes; ++k) {
            if (r.lanes == 3) lane(gl, cols, 0) += lane(g, cols, k).cwiseProduct(lane(r.value, cols, k));
            if (l.lanes == 3) lane(gl, cols, k) += lane(g, cols, k).cwiseProduct(r0);
          }
        }
        {
          Matrix& gr = adjoint(n.b);
          lane(gr, cols, 0) += lane(g, cols, 0).cwiseProduct(l0);
          for (int k = 1; k < n.lanes; ++k) {
            if (l.lanes == 3) lane(gr, cols, 0) += lane(g, cols, k).cwiseProduct(lane(l.value, cols, k));
            if (r.lanes == 3) lane(gr, cols, k) += lane(g, cols, k).cwiseProduct(l0);
          }
        }
        break;
      }
      case Op::SumRows:
        adjoint(n.a).rowwise() += g.row(0);
        break;
      case Op::SumCols: {
        const Node& x = nodes_[n.a];
        Matrix& ga = adjoint(n.a);
        for (int k = 0; k < n.lanes; ++k) lane(ga, x.cols, k).colwise() += g.col(k);
        break;
      }
      case Op::Scale:
        adjoint(n.a) += n.c0 * g;
        break;
      case Op::ScaleColumns: {
        Matrix& ga = adjoint(n.a);
        for (int k = 0; k < n.lanes; ++k) lane(ga, cols, k) += lane(g, cols, k) * n.row.asDiagonal();
        break;
      }
      case Op::ScaleByParam: {
        const Node& x = nodes_[n.a];
        grad_block(n.param)(0, 0) += g.cwiseProduct(x.value).sum();
        adjoint(n.a) += params_.scalar(n.param) * g;
        break;
      }
      case Op::Add: {
        const Node& l = nodes_[n.a];
        const Node& r = nodes_[n.b];
        adjoint(n.a) += n.c0 * g.leftCols(l.lanes * cols);
        adjoint(n.b) += n.c1 * g.leftCols(r.lanes * cols);
        break;
      }
      case Op::Tangent:
        lane(adjoint(n.a), cols, n.param + 1) += g;
        break;
    }
  }

  // Chain through row normalization: for w_hat = w / |w|, dL/dw = (g - w_hat (w_hat . g)) / |w|.
  std::vector<double> flat(params_.size(), 0.0);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (grads[b].size() == 0) continue;
    Matrix g = grads[b];
    if (blocks[b].row_normalized) {
      const Matrix& w_hat = effective_weight(static_cast<int>(b));
      const Eigen::VectorXd& norms = row_norms_[b];
      for (Index r = 0; r < g.rows(); ++r) {
        const double proj = w_hat.row(r).dot(g.row(r));
        g.row(r) = (g.row(r) - proj * w_hat.row(r)) / norms(r);
      }
    }
    Eigen::Map<Matrix>(flat.data() + blocks[b].offset, blocks[b].rows, blocks[b].cols) = g;
  }
  return flat;
}

}  // namespace glab::diffkit
