#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "modgen/autograd.hpp"

namespace modgen {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// ---- elementwise --------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  Tensor<T> out = a.value();
  out += b.value();
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out), {a, b}, [an, bn](const Tensor<T>& g) {
    an->accumulate(g);
    bn->accumulate(g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> out = a.value();
  const T* pb = b.value().data();
  for (Index i = 0; i < out.numel(); ++i) out[i] -= pb[i];
  auto an = a.node(), bn = b.node();
  return make_op<T>(std::move(out), {a, b}, [an, bn](const Tensor<T>& g) {
    an->accumulate(g);
    if (bn->requires_grad) {
      Tensor<T> neg = g;
      for (auto& v : neg.values()) v = -v;
      bn->accumulate(std::move(neg));
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an, factor](const Tensor<T>& g) {
    Tensor<T> ga = g;
    for (auto& v : ga.values()) v *= factor;
    an->accumulate(std::move(ga));
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v < T(0) ? T(0) : v;  // NaN passes through
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an](const Tensor<T>& g) {
    Tensor<T> ga = g;
    const T* x = an->value.data();
    for (Index i = 0; i < ga.numel(); ++i)
      if (!(x[i] > T(0))) ga[i] = T(0);
    an->accumulate(std::move(ga));
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = T(1) / (T(1) + std::exp(-v));
  Tensor<T> saved = out;
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an, saved = std::move(saved)](const Tensor<T>& g) {
    Tensor<T> ga = g;
    for (Index i = 0; i < ga.numel(); ++i) ga[i] *= saved[i] * (T(1) - saved[i]);
    an->accumulate(std::move(ga));
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  auto an = a.node();
  return make_op<T>(std::move(out), {a}, [an](const Tensor<T>& g) {
    an->accumulate(g.reshaped(an->value.shape()));
  });
}

// ---- reductions ---------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  T total = T(0);
  for (T v : a.value().values()) total += v;
  auto an = a.node();
  return make_op<T>(Tensor<T>::scalar(total), {a}, [an](const Tensor<T>& g) {
    an->accumulate(Tensor<T>(an->value.shape(), g.item()));
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const Index n = a.numel();
  require(n > 0, "mean of empty tensor");
  return scale(sum_all(a), T(1) / static_cast<T>(n));
}

// Sum of scalar Vars, evaluated in the given order.
template <typename T>
Var<T> add_scalars(const std::vector<Var<T>>& terms) {
  T total = T(0);
  for (const auto& t : terms) total += t.item();
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& t : terms) nodes.push_back(t.node());
  return make_op<T>(Tensor<T>::scalar(total), terms, [nodes](const Tensor<T>& g) {
    for (const auto& n : nodes) n->accumulate(Tensor<T>::scalar(g.item()));
  });
}

// ---- axis manipulation --------------------------------------------------

// Concatenates along `axis`; all other extents must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, Index axis) {
  require(!parts.empty(), "concat of nothing");
  const Shape& first = parts.front().shape();
  const Index rank = static_cast<Index>(first.size());
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "concat axis out of range");
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= first[i];
  for (Index i = axis + 1; i < rank; ++i) inner *= first[i];
  Index total_axis = 0;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    require(static_cast<Index>(p.shape().size()) == rank, "concat rank mismatch");
    for (Index i = 0; i < rank; ++i)
      if (i != axis)
        require(p.shape()[i] == first[i], "concat extent mismatch " + shape_string(p.shape()) +
                                              " vs " + shape_string(first));
    widths.push_back(p.shape()[axis] * inner);
    total_axis += p.shape()[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_axis;
  Tensor<T> out(out_shape);
  const Index row = total_axis * inner;
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().data();
    for (Index o = 0; o < outer; ++o)
      std::copy_n(src + o * widths[k], widths[k], out.data() + o * row + offset);
    offset += widths[k];
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_op<T>(std::move(out), parts, [nodes, widths, outer, row](const Tensor<T>& g) {
    Index off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) {
        Tensor<T> gk(nodes[k]->value.shape());
        for (Index o = 0; o < outer; ++o)
          std::copy_n(g.data() + o * row + off, widths[k], gk.data() + o * widths[k]);
        nodes[k]->accumulate(std::move(gk));
      }
      off += widths[k];
    }
  });
}

// Gathers slices along axis 0: out[i] = x[rows[i]]. Repeated rows sum their gradients.
template <typename T>
Var<T> index_rows(const Var<T>& x, const std::vector<Index>& rows) {
  require(x.value().rank() >= 1, "index_rows expects rank >= 1");
  const Index n = x.dim(0);
  const Index inner = n > 0 ? x.numel() / n : 0;
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<Index>(rows.size());
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < n, "index_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(x.value().data() + rows[i] * inner, inner, out.data() + static_cast<Index>(i) * inner);
  }
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, rows, inner](const Tensor<T>& g) {
    Tensor<T> gx(xn->value.shape());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const T* src = g.data() + static_cast<Index>(i) * inner;
      T* dst = gx.data() + rows[i] * inner;
      for (Index j = 0; j < inner; ++j) dst[j] += src[j];
    }
    xn->accumulate(std::move(gx));
  });
}

// ---- dense layers and losses --------------------------------------------

// x: [N, in], weight: [out, in], bias: [out] -> [N, out]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require(x.value().rank() == 2 && weight.value().rank() == 2, "linear expects 2-D operands");
  const Index n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  require(weight.dim(1) == in, "linear: input features " + std::to_string(in) +
                                   " vs weight " + shape_string(weight.shape()));
  require(bias.numel() == out_dim, "linear: bias size mismatch");
  Tensor<T> out(Shape{n, out_dim});
  ConstMatrixMap<T> xm(x.value().data(), n, in);
  ConstMatrixMap<T> wm(weight.value().data(), out_dim, in);
  MatrixMap<T> om(out.data(), n, out_dim);
  om.noalias() = xm * wm.transpose();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < out_dim; ++j) om(i, j) += bias.value()[j];
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_op<T>(std::move(out), {x, weight, bias},
                    [xn, wn, bn, n, in, out_dim](const Tensor<T>& g) {
                      ConstMatrixMap<T> gm(g.data(), n, out_dim);
                      if (xn->requires_grad) {
                        Tensor<T> gx(xn->value.shape());
                        MatrixMap<T>(gx.data(), n, in).noalias() =
                            gm * ConstMatrixMap<T>(wn->value.data(), out_dim, in);
                        xn->accumulate(std::move(gx));
                      }
                      if (wn->requires_grad) {
                        Tensor<T> gw(wn->value.shape());
                        MatrixMap<T>(gw.data(), out_dim, in).noalias() =
                            gm.transpose() * ConstMatrixMap<T>(xn->value.data(), n, in);
                        wn->accumulate(std::move(gw));
                      }
                      if (bn->requires_grad) {
                        Tensor<T> gb(bn->value.shape());
                        for (Index i = 0; i < n; ++i)
                          for (Index j = 0; j < out_dim; ++j) gb[j] += gm(i, j);
                        bn->accumulate(std::move(gb));
                      }
                    });
}

// Mean cross-entropy of logits [N, K] against integer labels.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  require(logits.value().rank() == 2, "cross_entropy expects [N, K] logits");
  const Index n = logits.dim(0), k = logits.dim(1);
  require(static_cast<Index>(labels.size()) == n, "cross_entropy: label count mismatch");
  for (int y : labels)
    require(y >= 0 && y < k, "cross_entropy: label " + std::to_string(y) + " out of range [0," +
                                 std::to_string(k) + ")");
  Tensor<T> probs(Shape{n, k});
  double total = 0.0;
  const T* z = logits.value().data();
  for (Index i = 0; i < n; ++i) {
    double mx = z[i * k];
    for (Index j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(z[i * k + j]));
    double se = 0.0;
    for (Index j = 0; j < k; ++j) se += std::exp(static_cast<double>(z[i * k + j]) - mx);
    const double lse = mx + std::log(se);
    total += lse - static_cast<double>(z[i * k + labels[i]]);
    for (Index j = 0; j < k; ++j)
      probs[i * k + j] = static_cast<T>(std::exp(static_cast<double>(z[i * k + j]) - lse));
  }
  auto ln = logits.node();
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n))), {logits},
                    [ln, probs = std::move(probs), labels, n, k](const Tensor<T>& g) {
                      Tensor<T> gl = probs;
                      const T s = g.item() / static_cast<T>(n);
                      for (Index i = 0; i < n; ++i) gl[i * k + labels[i]] -= T(1);
                      for (auto& v : gl.values()) v *= s;
                      ln->accumulate(std::move(gl));
                    });
}

// mean |a - b| over all elements.
template <typename T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "l1_mean: shape mismatch");
  const Index n = a.numel();
  require(n > 0, "l1_mean of empty tensors");
  double total = 0.0;
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (Index i = 0; i < n; ++i) total += std::abs(static_cast<double>(pa[i]) - pb[i]);
  auto an = a.node(), bn = b.node();
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n))), {a, b},
                    [an, bn, n](const Tensor<T>& g) {
                      Tensor<T> gs(an->value.shape());
                      const T s = g.item() / static_cast<T>(n);
                      const T* pa = an->value.data();
                      const T* pb = bn->value.data();
                      for (Index i = 0; i < n; ++i)
                        gs[i] = pa[i] > pb[i] ? s : (pa[i] < pb[i] ? -s : T(0));
                      if (bn->requires_grad) {
                        Tensor<T> neg = gs;
                        for (auto& v : neg.values()) v = -v;
                        bn->accumulate(std::move(neg));
                      }
                      an->accumulate(std::move(gs));
                    });
}

}  // namespace modgen
