// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// Every backward rule is itself written in terms of differentiable ops, so
// gradients produced with `create_graph = true` can be differentiated again.
// This is what lets the outer meta-gradient flow through the inner
// distillation step.

#ifndef METADMOE_AUTODIFF_HPP
#define METADMOE_AUTODIFF_HPP

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace metadmoe {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

namespace ad {

namespace detail {
inline thread_local bool grad_enabled = true;
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled; }

/// Scoped switch for graph recording. Ops executed while recording is off
/// produce constants.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(detail::grad_enabled) {
    detail::grad_enabled = enabled;
  }
  ~GradModeGuard() { detail::grad_enabled = previous_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

template <typename Scalar>
class Var;

template <typename Scalar>
struct Node {
  using BackwardFn =
      std::function<std::vector<Var<Scalar>>(const Var<Scalar>& self, const Var<Scalar>& grad)>;

  Matrix<Scalar> value;
  std::vector<Var<Scalar>> parents;
  BackwardFn backward;
  bool requires_grad = false;
};

/// Shared handle to a node of the computation graph.
template <typename Scalar>
class Var {
 public:
  using NodeType = Node<Scalar>;

  Var() = default;
  explicit Var(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  static Var constant(Matrix<Scalar> value) {
    auto node = std::make_shared<NodeType>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  static Var leaf(Matrix<Scalar> value, bool requires_grad = true) {
    auto node = std::make_shared<NodeType>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix<Scalar>& value() const { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Scalar item() const {
    if (rows() != 1 || cols() != 1) throw std::invalid_argument("item() on a non-scalar Var");
    return node_->value(0, 0);
  }
  Var detach() const { return constant(node_->value); }

  NodeType* node() const { return node_.get(); }
  const std::shared_ptr<NodeType>& shared() const { return node_; }

 private:
  std::shared_ptr<NodeType> node_;
};

template <typename Scalar>
Var<Scalar> make_op(Matrix<Scalar> value, std::vector<Var<Scalar>> parents,
                    typename Node<Scalar>::BackwardFn backward) {
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (!needs) return Var<Scalar>::constant(std::move(value));
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->parents = std::move(parents);
  node->backward = std::move(backward);
  node->requires_grad = true;
  return Var<Scalar>(std::move(node));
}

namespace detail {

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + ")");
  }
}

template <typename Scalar>
Matrix<Scalar> reshape_row_major(const Matrix<Scalar>& a, Index rows, Index cols) {
  using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (rows * cols != a.size()) throw std::invalid_argument("reshape: element count mismatch");
  RowMajor tmp = a;
  return Eigen::Map<const RowMajor>(tmp.data(), rows, cols);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  return make_op<Scalar>(a.value() + b.value(), {a, b},
                         [](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{g, g};
                         });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a) {
  return make_op<Scalar>(-a.value(), {a}, [](const Var<Scalar>&, const Var<Scalar>& g) {
    return std::vector<Var<Scalar>>{-g};
  });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  return make_op<Scalar>(a.value() - b.value(), {a, b},
                         [](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{g, -g};
                         });
}

template <typename Scalar>
Var<Scalar> cwise_product(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "cwise_product");
  return make_op<Scalar>(a.value().cwiseProduct(b.value()), {a, b},
                         [a, b](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{cwise_product(g, b), cwise_product(g, a)};
                         });
}

template <typename Scalar>
Var<Scalar> cwise_quotient(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "cwise_quotient");
  return make_op<Scalar>(a.value().cwiseQuotient(b.value()), {a, b},
                         [a, b](const Var<Scalar>& self, const Var<Scalar>& g) {
                           Var<Scalar> ga = cwise_quotient(g, b);
                           Var<Scalar> gb = -cwise_product(ga, self);
                           return std::vector<Var<Scalar>>{ga, gb};
                         });
}

template <typename Scalar>
Var<Scalar> operator*(Scalar s, const Var<Scalar>& a) {
  return make_op<Scalar>(s * a.value(), {a}, [s](const Var<Scalar>&, const Var<Scalar>& g) {
    return std::vector<Var<Scalar>>{s * g};
  });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s) {
  return make_op<Scalar>((a.value().array() + s).matrix(), {a},
                         [](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{g};
                         });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
  return make_op<Scalar>(a.value().array().exp().matrix(), {a},
                         [](const Var<Scalar>& self, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{cwise_product(g, self)};
                         });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& a) {
  return make_op<Scalar>(a.value().array().log().matrix(), {a},
                         [a](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{cwise_quotient(g, a)};
                         });
}

template <typename Scalar>
Var<Scalar> pow(const Var<Scalar>& a, Scalar p) {
  return make_op<Scalar>(a.value().array().pow(p).matrix(), {a},
                         [a, p](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{cwise_product(g, p * pow(a, p - 1))};
                         });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  return make_op<Scalar>(a.value().array().tanh().matrix(), {a},
                         [](const Var<Scalar>& self, const Var<Scalar>& g) {
                           Var<Scalar> one_minus_sq = add_scalar(-cwise_product(self, self), Scalar(1));
                           return std::vector<Var<Scalar>>{cwise_product(g, one_minus_sq)};
                         });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  Matrix<Scalar> mask = (a.value().array() > Scalar(0)).template cast<Scalar>().matrix();
  Var<Scalar> mask_var = Var<Scalar>::constant(mask);
  return make_op<Scalar>(a.value().cwiseProduct(mask), {a},
                         [mask_var](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{cwise_product(g, mask_var)};
                         });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts. Each pair below is mutually adjoint.

template <typename Scalar>
Var<Scalar> broadcast_scalar(const Var<Scalar>& s, Index rows, Index cols);

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> v(1, 1);
  v(0, 0) = a.value().sum();
  const Index r = a.rows();
  const Index c = a.cols();
  return make_op<Scalar>(std::move(v), {a}, [r, c](const Var<Scalar>&, const Var<Scalar>& g) {
    return std::vector<Var<Scalar>>{broadcast_scalar(g, r, c)};
  });
}

template <typename Scalar>
Var<Scalar> broadcast_scalar(const Var<Scalar>& s, Index rows, Index cols) {
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("broadcast_scalar: expects 1x1");
  return make_op<Scalar>(Matrix<Scalar>::Constant(rows, cols, s.value()(0, 0)), {s},
                         [](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{sum(g)};
                         });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return (Scalar(1) / static_cast<Scalar>(a.value().size())) * sum(a);
}

template <typename Scalar>
Var<Scalar> broadcast_cols(const Var<Scalar>& a, Index cols);

/// n x m -> n x 1
template <typename Scalar>
Var<Scalar> row_sum(const Var<Scalar>& a) {
  const Index c = a.cols();
  return make_op<Scalar>(a.value().rowwise().sum(), {a},
                         [c](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{broadcast_cols(g, c)};
                         });
}

/// n x 1 -> n x cols
template <typename Scalar>
Var<Scalar> broadcast_cols(const Var<Scalar>& a, Index cols) {
  if (a.cols() != 1) throw std::invalid_argument("broadcast_cols: expects a column");
  return make_op<Scalar>(a.value().replicate(1, cols), {a},
                         [](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{row_sum(g)};
                         });
}

template <typename Scalar>
Var<Scalar> broadcast_rows(const Var<Scalar>& a, Index rows);

/// n x m -> 1 x m
template <typename Scalar>
Var<Scalar> col_sum(const Var<Scalar>& a) {
  const Index r = a.rows();
  return make_op<Scalar>(a.value().colwise().sum(), {a},
                         [r](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{broadcast_rows(g, r)};
                         });
}

/// 1 x m -> rows x m
template <typename Scalar>
Var<Scalar> broadcast_rows(const Var<Scalar>& a, Index rows) {
  if (a.rows() != 1) throw std::invalid_argument("broadcast_rows: expects a row");
  return make_op<Scalar>(a.value().replicate(rows, 1), {a},
                         [](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{col_sum(g)};
                         });
}

template <typename Scalar>
Var<Scalar> repeat_rows(const Var<Scalar>& a, Index group);

/// (n*group) x m -> n x m, summing each run of `group` consecutive rows.
template <typename Scalar>
Var<Scalar> block_row_sum(const Var<Scalar>& a, Index group) {
  if (group < 1 || a.rows() % group != 0) throw std::invalid_argument("block_row_sum: bad group");
  const Index n = a.rows() / group;
  Matrix<Scalar> out(n, a.cols());
  for (Index i = 0; i < n; ++i) out.row(i) = a.value().middleRows(i * group, group).colwise().sum();
  return make_op<Scalar>(std::move(out), {a}, [group](const Var<Scalar>&, const Var<Scalar>& g) {
    return std::vector<Var<Scalar>>{repeat_rows(g, group)};
  });
}

/// n x m -> (n*group) x m, each row repeated `group` times consecutively.
template <typename Scalar>
Var<Scalar> repeat_rows(const Var<Scalar>& a, Index group) {
  if (group < 1) throw std::invalid_argument("repeat_rows: bad group");
  Matrix<Scalar> out(a.rows() * group, a.cols());
  for (Index i = 0; i < a.rows(); ++i) out.middleRows(i * group, group) = a.value().row(i).replicate(group, 1);
  return make_op<Scalar>(std::move(out), {a}, [group](const Var<Scalar>&, const Var<Scalar>& g) {
    return std::vector<Var<Scalar>>{block_row_sum(g, group)};
  });
}

template <typename Scalar>
Var<Scalar> pad_cols(const Var<Scalar>& a, Index start, Index total);

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Index start, Index width) {
  if (start < 0 || width < 0 || start + width > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  const Index total = a.cols();
  return make_op<Scalar>(a.value().middleCols(start, width), {a},
                         [start, total](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{pad_cols(g, start, total)};
                         });
}

/// Places `a` at column offset `start` of a zero matrix with `total` columns.
template <typename Scalar>
Var<Scalar> pad_cols(const Var<Scalar>& a, Index start, Index total) {
  if (start < 0 || start + a.cols() > total) throw std::invalid_argument("pad_cols: out of range");
  Matrix<Scalar> out = Matrix<Scalar>::Zero(a.rows(), total);
  out.middleCols(start, a.cols()) = a.value();
  const Index width = a.cols();
  return make_op<Scalar>(std::move(out), {a}, [start, width](const Var<Scalar>&, const Var<Scalar>& g) {
    return std::vector<Var<Scalar>>{slice_cols(g, start, width)};
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw std::invalid_argument("concat_cols: row mismatch");
    total += p.cols();
  }
  Matrix<Scalar> out(parts.front().rows(), total);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    offsets.push_back(at);
    at += p.cols();
  }
  std::vector<Index> widths;
  for (const auto& p : parts) widths.push_back(p.cols());
  return make_op<Scalar>(std::move(out), parts,
                         [offsets, widths](const Var<Scalar>&, const Var<Scalar>& g) {
                           std::vector<Var<Scalar>> grads;
                           for (std::size_t i = 0; i < offsets.size(); ++i) {
                             grads.push_back(slice_cols(g, offsets[i], widths[i]));
                           }
                           return grads;
                         });
}

/// Row-major reshape.
template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Index rows, Index cols) {
  const Index r = a.rows();
  const Index c = a.cols();
  return make_op<Scalar>(detail::reshape_row_major(a.value(), rows, cols), {a},
                         [r, c](const Var<Scalar>&, const Var<Scalar>& g) {
                           return std::vector<Var<Scalar>>{reshape(g, r, c)};
                         });
}

// ---------------------------------------------------------------------------
// Batched matrix products over vertically stacked blocks.
//
// `a` holds `batch` blocks stacked by rows, likewise `b`. Block i of the
// result is op(a_i) * op(b_i), where op transposes when the flag is set.

template <typename Scalar>
Var<Scalar> batched_matmul(const Var<Scalar>& a, const Var<Scalar>& b, Index batch, bool trans_a = false,
                           bool trans_b = false) {
  if (batch < 1 || a.rows() % batch != 0 || b.rows() % batch != 0) {
    throw std::invalid_argument("batched_matmul: rows not divisible by batch");
  }
  const Index ar = a.rows() / batch;
  const Index br = b.rows() / batch;
  const Index inner_a = trans_a ? ar : a.cols();
  const Index inner_b = trans_b ? b.cols() : br;
  if (inner_a != inner_b) throw std::invalid_argument("batched_matmul: inner dimension mismatch");
  const Index out_r = trans_a ? a.cols() : ar;
  const Index out_c = trans_b ? br : b.cols();
  Matrix<Scalar> out(out_r * batch, out_c);
  for (Index i = 0; i < batch; ++i) {
    auto ab = a.value().middleRows(i * ar, ar);
    auto bb = b.value().middleRows(i * br, br);
    auto ob = out.middleRows(i * out_r, out_r);
    if (!trans_a && !trans_b) ob.noalias() = ab * bb;
    else if (!trans_a && trans_b) ob.noalias() = ab * bb.transpose();
    else if (trans_a && !trans_b) ob.noalias() = ab.transpose() * bb;
    else ob.noalias() = ab.transpose() * bb.transpose();
  }
  return make_op<Scalar>(std::move(out), {a, b},
                         [a, b, batch, trans_a, trans_b](const Var<Scalar>&, const Var<Scalar>& g) {
                           Var<Scalar> ga, gb;
                           if (!trans_a && !trans_b) {
                             ga = batched_matmul(g, b, batch, false, true);
                             gb = batched_matmul(a, g, batch, true, false);
                           } else if (!trans_a && trans_b) {
                             ga = batched_matmul(g, b, batch, false, false);
                             gb = batched_matmul(g, a, batch, true, false);
                           } else if (trans_a && !trans_b) {
                             ga = batched_matmul(b, g, batch, false, true);
                             gb = batched_matmul(a, g, batch, false, false);
                           } else {
                             ga = batched_matmul(b, g, batch, true, true);
                             gb = batched_matmul(g, a, batch, true, true);
                           }
                           return std::vector<Var<Scalar>>{ga, gb};
                         });
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  return batched_matmul(a, b, 1, false, false);
}

// ---------------------------------------------------------------------------
// Composite ops

/// x W + b, with b a 1 x out row broadcast over the batch.
template <typename Scalar>
Var<Scalar> affine(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  return matmul(x, weight) + broadcast_rows(bias, x.rows());
}

template <typename Scalar>
Var<Scalar> log_softmax_rows(const Var<Scalar>& logits) {
  Matrix<Scalar> row_max = logits.value().rowwise().maxCoeff();
  Var<Scalar> shifted = logits - Var<Scalar>::constant(row_max.replicate(1, logits.cols()));
  Var<Scalar> lse = log(row_sum(exp(shifted)));
  return shifted - broadcast_cols(lse, logits.cols());
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& logits) {
  Matrix<Scalar> row_max = logits.value().rowwise().maxCoeff();
  Var<Scalar> e = exp(logits - Var<Scalar>::constant(row_max.replicate(1, logits.cols())));
  return cwise_quotient(e, broadcast_cols(row_sum(e), logits.cols()));
}

/// Row-wise layer normalization with learnable per-feature gain and shift.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps) {
  const Index n = x.rows();
  const Index m = x.cols();
  const Scalar inv_m = Scalar(1) / static_cast<Scalar>(m);
  Var<Scalar> centered = x - broadcast_cols(inv_m * row_sum(x), m);
  Var<Scalar> variance = inv_m * row_sum(cwise_product(centered, centered));
  Var<Scalar> inv_std = pow(add_scalar(variance, eps), Scalar(-0.5));
  Var<Scalar> normed = cwise_product(centered, broadcast_cols(inv_std, m));
  return cwise_product(normed, broadcast_rows(gamma, n)) + broadcast_rows(beta, n);
}

/// tanh approximation of GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
  const Scalar k = static_cast<Scalar>(std::sqrt(2.0 / 3.14159265358979323846));
  Var<Scalar> inner = k * (x + Scalar(0.044715) * pow(x, Scalar(3)));
  return Scalar(0.5) * cwise_product(x, add_scalar(tanh(inner), Scalar(1)));
}

/// Per-row Euclidean norm (n x m -> n x 1). The gradient at a zero row is 0.
template <typename Scalar>
Var<Scalar> row_norm(const Var<Scalar>& a) {
  Matrix<Scalar> norms = a.value().rowwise().norm();
  return make_op<Scalar>(norms, {a}, [a](const Var<Scalar>& self, const Var<Scalar>& g) {
    const Matrix<Scalar>& v = self.value();
    Matrix<Scalar> zero_fill = (v.array() == Scalar(0)).template cast<Scalar>().matrix();
    Matrix<Scalar> nonzero = (v.array() != Scalar(0)).template cast<Scalar>().matrix();
    Var<Scalar> coef = cwise_product(cwise_quotient(g, self + Var<Scalar>::constant(zero_fill)),
                                     Var<Scalar>::constant(nonzero));
    return std::vector<Var<Scalar>>{cwise_product(broadcast_cols(coef, a.cols()), a)};
  });
}

// ---------------------------------------------------------------------------
// Gradient computation

/// Gradients of the scalar `output` with respect to each of `inputs`.
///
/// With `create_graph` the returned gradients are themselves graph nodes and
/// can be differentiated again. Inputs that do not influence the output get
/// an all-zero constant.
template <typename Scalar>
std::vector<Var<Scalar>> grad(const Var<Scalar>& output, const std::vector<Var<Scalar>>& inputs,
                              bool create_graph = false) {
  if (!output.defined() || output.rows() != 1 || output.cols() != 1) {
    throw std::invalid_argument("grad: output must be a defined 1x1 scalar");
  }
  using NodeT = Node<Scalar>;

  // Iterative post-order DFS over nodes that require gradients.
  std::vector<NodeT*> order;
  std::unordered_map<NodeT*, Var<Scalar>> handles;
  if (output.requires_grad()) {
    std::unordered_map<NodeT*, bool> visited;
    std::vector<std::pair<Var<Scalar>, std::size_t>> stack;
    stack.emplace_back(output, 0);
    visited[output.node()] = true;
    while (!stack.empty()) {
      auto& [var, next] = stack.back();
      NodeT* node = var.node();
      if (next < node->parents.size()) {
        const Var<Scalar>& parent = node->parents[next++];
        if (parent.requires_grad() && !visited[parent.node()]) {
          visited[parent.node()] = true;
          stack.emplace_back(parent, 0);
        }
      } else {
        handles.emplace(node, var);
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  GradModeGuard mode(create_graph);
  std::unordered_map<NodeT*, Var<Scalar>> grads;
  if (output.requires_grad()) grads[output.node()] = Var<Scalar>::constant(Matrix<Scalar>::Ones(1, 1));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    auto found = grads.find(node);
    if (found == grads.end() || node->parents.empty()) continue;
    std::vector<Var<Scalar>> parent_grads = node->backward(handles.at(node), found->second);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      const Var<Scalar>& parent = node->parents[i];
      if (!parent.requires_grad() || !parent_grads[i].defined()) continue;
      auto slot = grads.find(parent.node());
      if (slot == grads.end()) {
        grads.emplace(parent.node(), parent_grads[i]);
      } else {
        slot->second = slot->second + parent_grads[i];
      }
    }
  }

  std::vector<Var<Scalar>> result;
  result.reserve(inputs.size());
  for (const auto& input : inputs) {
    auto found = grads.find(input.node());
    if (found == grads.end()) {
      result.push_back(Var<Scalar>::constant(Matrix<Scalar>::Zero(input.rows(), input.cols())));
    } else if (!create_graph) {
      result.push_back(found->second.detach());
    } else {
      result.push_back(found->second);
    }
  }
  return result;
}

}  // namespace ad
}  // namespace metadmoe

#endif  // METADMOE_AUTODIFF_HPP
