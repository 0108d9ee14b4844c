#pragma once

#include <algorithm>
#include <cmath>

#include "modgen/ops.hpp"

namespace modgen {

// Convolutions reduce to GEMM over an unrolled column buffer. Batches are
// processed in slices so the buffer stays below kColumnBudget elements.
inline constexpr Index kColumnBudget = Index{1} << 23;

struct ConvGeometry {
  Index channels = 0, height = 0, width = 0;
  Index kernel = 1, stride = 1, pad = 0;
  Index out_height = 0, out_width = 0;

  static ConvGeometry make(Index channels, Index height, Index width, Index kernel, Index stride,
                           Index pad) {
    ConvGeometry g{channels, height, width, kernel, stride, pad, 0, 0};
    g.out_height = (height + 2 * pad - kernel) / stride + 1;
    g.out_width = (width + 2 * pad - kernel) / stride + 1;
    require(g.out_height > 0 && g.out_width > 0, "convolution output would be empty");
    return g;
  }
  Index rows() const { return channels * kernel * kernel; }
  Index out_pixels() const { return out_height * out_width; }
  Index in_pixels() const { return height * width; }
};

namespace detail {

inline Index slice_size(Index per_item, Index total) {
  return std::clamp<Index>(kColumnBudget / std::max<Index>(per_item, 1), 1, total);
}

// Output columns [lo, hi) whose input index o * stride - pad + k lies in [0, n).
inline std::pair<Index, Index> valid_range(Index n, Index out, Index stride, Index pad, Index k) {
  const Index off = pad - k;
  Index lo = off > 0 ? (off + stride - 1) / stride : 0;
  Index hi = n - 1 + off >= 0 ? (n - 1 + off) / stride + 1 : 0;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
  return {lo, hi};
}

// image: [C, H, W]; cols: rows() x ld, writes columns [col0, col0 + out_pixels).
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols, Index ld, Index col0) {
  const Index k = g.kernel, s = g.stride, wo = g.out_width;
  for (Index c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.in_pixels();
    for (Index ki = 0; ki < k; ++ki) {
      const auto [oh_lo, oh_hi] = valid_range(g.height, g.out_height, s, g.pad, ki);
      for (Index kj = 0; kj < k; ++kj) {
        const auto [ow_lo, ow_hi] = valid_range(g.width, wo, s, g.pad, kj);
        T* row = cols + ((c * k + ki) * k + kj) * ld + col0;
        std::fill_n(row, oh_lo * wo, T(0));
        for (Index oh = oh_lo; oh < oh_hi; ++oh) {
          T* dst = row + oh * wo;
          const T* src = plane + (oh * s - g.pad + ki) * g.width - g.pad + kj;
          std::fill_n(dst, ow_lo, T(0));
          if (s == 1) {
            std::copy(src + ow_lo, src + ow_hi, dst + ow_lo);
          } else {
            for (Index ow = ow_lo; ow < ow_hi; ++ow) dst[ow] = src[ow * s];
          }
          std::fill(dst + ow_hi, dst + wo, T(0));
        }
        std::fill(row + oh_hi * wo, row + g.out_height * wo, T(0));
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, Index ld, Index col0, T* image) {
  const Index k = g.kernel, s = g.stride, wo = g.out_width;
  for (Index c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.in_pixels();
    for (Index ki = 0; ki < k; ++ki) {
      const auto [oh_lo, oh_hi] = valid_range(g.height, g.out_height, s, g.pad, ki);
      for (Index kj = 0; kj < k; ++kj) {
        const auto [ow_lo, ow_hi] = valid_range(g.width, wo, s, g.pad, kj);
        const T* row = cols + ((c * k + ki) * k + kj) * ld + col0;
        for (Index oh = oh_lo; oh < oh_hi; ++oh) {
          const T* src = row + oh * wo;
          T* dst = plane + (oh * s - g.pad + ki) * g.width - g.pad + kj;
          for (Index ow = ow_lo; ow < ow_hi; ++ow) dst[ow * s] += src[ow];
        }
      }
    }
  }
}

// [nb, C, P] block starting at item n0 -> [C, nb * P] matrix.
template <typename T>
void gather_channel_major(const T* x, Index n0, Index nb, Index channels, Index pixels,
                          RowMatrix<T>& out) {
  out.resize(channels, nb * pixels);
  for (Index n = 0; n < nb; ++n)
    for (Index c = 0; c < channels; ++c)
      std::copy_n(x + ((n0 + n) * channels + c) * pixels, pixels, out.data() + c * nb * pixels + n * pixels);
}

template <typename T>
void scatter_channel_major(const RowMatrix<T>& m, Index n0, Index nb, Index channels,
                           Index pixels, T* x, bool accumulate) {
  for (Index n = 0; n < nb; ++n)
    for (Index c = 0; c < channels; ++c) {
      const T* src = m.data() + c * nb * pixels + n * pixels;
      T* dst = x + ((n0 + n) * channels + c) * pixels;
      if (accumulate) {
        for (Index p = 0; p < pixels; ++p) dst[p] += src[p];
      } else {
        std::copy_n(src, pixels, dst);
      }
    }
}

}  // namespace detail

// x: [N, C, H, W], weight: [O, C, k, k], bias: [O] -> [N, O, Ho, Wo]
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Index stride,
              Index pad) {
  require(x.value().rank() == 4, "conv2d expects [N, C, H, W] input, got " + shape_string(x.shape()));
  require(weight.value().rank() == 4 && weight.dim(2) == weight.dim(3),
          "conv2d expects square [O, C, k, k] weight");
  const Index n = x.dim(0), out_ch = weight.dim(0);
  require(weight.dim(1) == x.dim(1), "conv2d: input has " + std::to_string(x.dim(1)) +
                                         " channels, weight expects " +
                                         std::to_string(weight.dim(1)));
  const auto g = ConvGeometry::make(x.dim(1), x.dim(2), x.dim(3), weight.dim(2), stride, pad);
  const Index p_out = g.out_pixels();
  Tensor<T> out(Shape{n, out_ch, g.out_height, g.out_width});
  ConstMatrixMap<T> wm(weight.value().data(), out_ch, g.rows());
  const Index slice = detail::slice_size(g.rows() * p_out, n);
  RowMatrix<T> cols, om;
  for (Index n0 = 0; n0 < n; n0 += slice) {
    const Index nb = std::min(slice, n - n0);
    cols.resize(g.rows(), nb * p_out);
    for (Index i = 0; i < nb; ++i)
      detail::im2col(x.value().data() + (n0 + i) * g.channels * g.in_pixels(), g, cols.data(),
                     nb * p_out, i * p_out);
    om.noalias() = wm * cols;
    for (Index o = 0; o < out_ch; ++o) om.row(o).array() += bias.value()[o];
    detail::scatter_channel_major(om, n0, nb, out_ch, p_out, out.data(), false);
  }
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_op<T>(std::move(out), {x, weight, bias},
                    [xn, wn, bn, g, n, out_ch, slice](const Tensor<T>& grad) {
    const Index p_out = g.out_pixels();
    ConstMatrixMap<T> wm(wn->value.data(), out_ch, g.rows());
    Tensor<T> gx, gw, gb;
    if (xn->requires_grad) gx = Tensor<T>(xn->value.shape());
    if (wn->requires_grad) gw = Tensor<T>(wn->value.shape());
    if (bn->requires_grad) gb = Tensor<T>(bn->value.shape());
    RowMatrix<T> gm, cols;
    for (Index n0 = 0; n0 < n; n0 += slice) {
      const Index nb = std::min(slice, n - n0);
      detail::gather_channel_major(grad.data(), n0, nb, out_ch, p_out, gm);
      if (wn->requires_grad) {
        cols.resize(g.rows(), nb * p_out);
        for (Index i = 0; i < nb; ++i)
          detail::im2col(xn->value.data() + (n0 + i) * g.channels * g.in_pixels(), g,
                         cols.data(), nb * p_out, i * p_out);
        MatrixMap<T>(gw.data(), out_ch, g.rows()).noalias() += gm * cols.transpose();
      }
      if (bn->requires_grad)
        for (Index o = 0; o < out_ch; ++o) gb[o] += gm.row(o).sum();
      if (xn->requires_grad) {
        cols.noalias() = wm.transpose() * gm;
        for (Index i = 0; i < nb; ++i)
          detail::col2im(cols.data(), g, nb * p_out, i * p_out,
                         gx.data() + (n0 + i) * g.channels * g.in_pixels());
      }
    }
    if (xn->requires_grad) xn->accumulate(std::move(gx));
    if (wn->requires_grad) wn->accumulate(std::move(gw));
    if (bn->requires_grad) bn->accumulate(std::move(gb));
  });
}

// x: [N, Cin, H, W], weight: [Cin, Cout, k, k], bias: [Cout]
// -> [N, Cout, (H-1)*stride - 2*pad + k + out_pad, same for W]
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Index stride,
                        Index pad, Index out_pad) {
  require(x.value().rank() == 4, "conv_transpose2d expects [N, C, H, W] input");
  require(weight.value().rank() == 4 && weight.dim(2) == weight.dim(3),
          "conv_transpose2d expects square [Cin, Cout, k, k] weight");
  require(weight.dim(0) == x.dim(1), "conv_transpose2d: channel mismatch");
  require(out_pad >= 0 && out_pad < stride, "conv_transpose2d: out_pad must be < stride");
  const Index n = x.dim(0), in_ch = x.dim(1), out_ch = weight.dim(1), k = weight.dim(2);
  const Index h = x.dim(2), w = x.dim(3);
  const Index ho = (h - 1) * stride - 2 * pad + k + out_pad;
  const Index wo = (w - 1) * stride - 2 * pad + k + out_pad;
  // Geometry of the adjoint convolution mapping the output back onto the input grid.
  const auto g = ConvGeometry::make(out_ch, ho, wo, k, stride, pad);
  require(g.out_height == h && g.out_width == w, "conv_transpose2d: inconsistent geometry");
  const Index p_in = h * w;
  Tensor<T> out(Shape{n, out_ch, ho, wo});
  ConstMatrixMap<T> wm(weight.value().data(), in_ch, g.rows());
  const Index slice = detail::slice_size(g.rows() * p_in, n);
  RowMatrix<T> xm, cols;
  for (Index n0 = 0; n0 < n; n0 += slice) {
    const Index nb = std::min(slice, n - n0);
    detail::gather_channel_major(x.value().data(), n0, nb, in_ch, p_in, xm);
    cols.noalias() = wm.transpose() * xm;
    for (Index i = 0; i < nb; ++i)
      detail::col2im(cols.data(), g, nb * p_in, i * p_in, out.data() + (n0 + i) * out_ch * ho * wo);
  }
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < out_ch; ++c) {
      T* plane = out.data() + (i * out_ch + c) * ho * wo;
      const T b = bias.value()[c];
      for (Index p = 0; p < ho * wo; ++p) plane[p] += b;
    }
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_op<T>(std::move(out), {x, weight, bias},
                    [xn, wn, bn, g, n, in_ch, out_ch, p_in, slice](const Tensor<T>& grad) {
    ConstMatrixMap<T> wm(wn->value.data(), in_ch, g.rows());
    const Index out_plane = g.in_pixels();
    Tensor<T> gx, gw, gb;
    if (xn->requires_grad) gx = Tensor<T>(xn->value.shape());
    if (wn->requires_grad) gw = Tensor<T>(wn->value.shape());
    if (bn->requires_grad) {
      gb = Tensor<T>(bn->value.shape());
      for (Index i = 0; i < n; ++i)
        for (Index c = 0; c < out_ch; ++c) {
          const T* plane = grad.data() + (i * out_ch + c) * out_plane;
          T s = T(0);
          for (Index p = 0; p < out_plane; ++p) s += plane[p];
          gb[c] += s;
        }
    }
    if (xn->requires_grad || wn->requires_grad) {
      RowMatrix<T> gcols, xm, gxm;
      for (Index n0 = 0; n0 < n; n0 += slice) {
        const Index nb = std::min(slice, n - n0);
        gcols.resize(g.rows(), nb * p_in);
        for (Index i = 0; i < nb; ++i)
          detail::im2col(grad.data() + (n0 + i) * out_ch * out_plane, g, gcols.data(), nb * p_in,
                         i * p_in);
        if (xn->requires_grad) {
          gxm.noalias() = wm * gcols;
          detail::scatter_channel_major(gxm, n0, nb, in_ch, p_in, gx.data(), true);
        }
        if (wn->requires_grad) {
          detail::gather_channel_major(xn->value.data(), n0, nb, in_ch, p_in, xm);
          MatrixMap<T>(gw.data(), in_ch, g.rows()).noalias() += xm * gcols.transpose();
        }
      }
    }
    if (xn->requires_grad) xn->accumulate(std::move(gx));
    if (wn->requires_grad) wn->accumulate(std::move(gw));
    if (bn->requires_grad) bn->accumulate(std::move(gb));
  });
}

// Convolution along the time axis of a clip.
// x: [N, T, C, P], weight: [O, C, kt], bias: [O] -> [N, To, O, P]
template <typename T>
Var<T> temporal_conv(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Index stride,
                     Index pad) {
  require(x.value().rank() == 4, "temporal_conv expects [N, T, C, P] input");
  require(weight.value().rank() == 3 && weight.dim(1) == x.dim(2),
          "temporal_conv: weight " + shape_string(weight.shape()) + " incompatible with input " +
              shape_string(x.shape()));
  const Index n = x.dim(0), t = x.dim(1), c = x.dim(2), p = x.dim(3);
  const Index out_ch = weight.dim(0), kt = weight.dim(2);
  const Index to = (t + 2 * pad - kt) / stride + 1;
  require(to > 0, "temporal_conv output would be empty");
  const Index rows = c * kt, per_item = to * p;
  const Index slice = detail::slice_size(rows * per_item, n);

  auto build_cols = [=](const T* src, Index n0, Index nb, RowMatrix<T>& cols) {
    cols.resize(rows, nb * per_item);
    for (Index ci = 0; ci < c; ++ci)
      for (Index dt = 0; dt < kt; ++dt) {
        T* row = cols.data() + (ci * kt + dt) * nb * per_item;
        for (Index i = 0; i < nb; ++i)
          for (Index ot = 0; ot < to; ++ot) {
            const Index it = ot * stride - pad + dt;
            T* dst = row + i * per_item + ot * p;
            if (it < 0 || it >= t) {
              std::fill_n(dst, p, T(0));
            } else {
              std::copy_n(src + (((n0 + i) * t + it) * c + ci) * p, p, dst);
            }
          }
      }
  };

  Tensor<T> out(Shape{n, to, out_ch, p});
  ConstMatrixMap<T> wm(weight.value().data(), out_ch, rows);
  RowMatrix<T> cols, om;
  for (Index n0 = 0; n0 < n; n0 += slice) {
    const Index nb = std::min(slice, n - n0);
    build_cols(x.value().data(), n0, nb, cols);
    om.noalias() = wm * cols;
    for (Index i = 0; i < nb; ++i)
      for (Index ot = 0; ot < to; ++ot)
        for (Index o = 0; o < out_ch; ++o) {
          const T* src = om.data() + o * nb * per_item + i * per_item + ot * p;
          T* dst = out.data() + (((n0 + i) * to + ot) * out_ch + o) * p;
          const T b = bias.value()[o];
          for (Index q = 0; q < p; ++q) dst[q] = src[q] + b;
        }
  }
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_op<T>(std::move(out), {x, weight, bias},
                    [=](const Tensor<T>& grad) {
    ConstMatrixMap<T> wm(wn->value.data(), out_ch, rows);
    Tensor<T> gx, gw, gb;
    if (xn->requires_grad) gx = Tensor<T>(xn->value.shape());
    if (wn->requires_grad) gw = Tensor<T>(wn->value.shape());
    if (bn->requires_grad) gb = Tensor<T>(bn->value.shape());
    RowMatrix<T> gm, cols;
    for (Index n0 = 0; n0 < n; n0 += slice) {
      const Index nb = std::min(slice, n - n0);
      gm.resize(out_ch, nb * per_item);
      for (Index i = 0; i < nb; ++i)
        for (Index ot = 0; ot < to; ++ot)
          for (Index o = 0; o < out_ch; ++o)
            std::copy_n(grad.data() + (((n0 + i) * to + ot) * out_ch + o) * p, p,
                        gm.data() + o * nb * per_item + i * per_item + ot * p);
      if (bn->requires_grad)
        for (Index o = 0; o < out_ch; ++o) gb[o] += gm.row(o).sum();
      if (wn->requires_grad) {
        build_cols(xn->value.data(), n0, nb, cols);
        MatrixMap<T>(gw.data(), out_ch, rows).noalias() += gm * cols.transpose();
      }
      if (xn->requires_grad) {
        cols.noalias() = wm.transpose() * gm;
        for (Index ci = 0; ci < c; ++ci)
          for (Index dt = 0; dt < kt; ++dt) {
            const T* row = cols.data() + (ci * kt + dt) * nb * per_item;
            for (Index i = 0; i < nb; ++i)
              for (Index ot = 0; ot < to; ++ot) {
                const Index it = ot * stride - pad + dt;
                if (it < 0 || it >= t) continue;
                const T* src = row + i * per_item + ot * p;
                T* dst = gx.data() + (((n0 + i) * t + it) * c + ci) * p;
                for (Index q = 0; q < p; ++q) dst[q] += src[q];
              }
          }
      }
    }
    if (xn->requires_grad) xn->accumulate(std::move(gx));
    if (wn->requires_grad) wn->accumulate(std::move(gw));
    if (bn->requires_grad) bn->accumulate(std::move(gb));
  });
}

// Per-sample, per-channel normalization over spatial positions with affine
// gain and bias. x: [N, C, ...spatial]
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                     T eps = T(1e-5)) {
  require(x.value().rank() >= 3, "instance_norm expects [N, C, ...] input");
  const Index n = x.dim(0), c = x.dim(1);
  const Index p = x.numel() / (n * c);
  require(gamma.numel() == c && beta.numel() == c, "instance_norm: parameter size mismatch");
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(n * c));
  for (Index i = 0; i < n * c; ++i) {
    const T* src = x.value().data() + i * p;
    double mean = 0.0;
    for (Index q = 0; q < p; ++q) mean += src[q];
    mean /= static_cast<double>(p);
    double var = 0.0;
    for (Index q = 0; q < p; ++q) var += (src[q] - mean) * (src[q] - mean);
    var /= static_cast<double>(p);
    const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
    inv_std[static_cast<std::size_t>(i)] = is;
    const T gm = gamma.value()[i % c], bt = beta.value()[i % c];
    for (Index q = 0; q < p; ++q) {
      const T h = static_cast<T>(src[q] - mean) * is;
      xhat[i * p + q] = h;
      out[i * p + q] = gm * h + bt;
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_op<T>(std::move(out), {x, gamma, beta},
                    [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c,
                     p](const Tensor<T>& grad) {
    Tensor<T> gx, gg, gb;
    if (xn->requires_grad) gx = Tensor<T>(xn->value.shape());
    if (gn->requires_grad) gg = Tensor<T>(gn->value.shape());
    if (bn->requires_grad) gb = Tensor<T>(bn->value.shape());
    for (Index i = 0; i < n * c; ++i) {
      const T* g = grad.data() + i * p;
      const T* h = xhat.data() + i * p;
      double sg = 0.0, sgh = 0.0;
      for (Index q = 0; q < p; ++q) {
        sg += g[q];
        sgh += static_cast<double>(g[q]) * h[q];
      }
      if (gn->requires_grad) gg[i % c] += static_cast<T>(sgh);
      if (bn->requires_grad) gb[i % c] += static_cast<T>(sg);
      if (xn->requires_grad) {
        const T gm = gn->value[i % c];
        const T is = inv_std[static_cast<std::size_t>(i)];
        const T mg = static_cast<T>(sg / static_cast<double>(p));
        const T mgh = static_cast<T>(sgh / static_cast<double>(p));
        T* dst = gx.data() + i * p;
        for (Index q = 0; q < p; ++q) dst[q] = gm * is * (g[q] - mg - h[q] * mgh);
      }
    }
    if (xn->requires_grad) xn->accumulate(std::move(gx));
    if (gn->requires_grad) gn->accumulate(std::move(gg));
    if (bn->requires_grad) bn->accumulate(std::move(gb));
  });
}

// Mean over time and space. x: [N, T, C, P] -> [N, C]
template <typename T>
Var<T> mean_pool(const Var<T>& x) {
  require(x.value().rank() == 4, "mean_pool expects [N, T, C, P] input");
  const Index n = x.dim(0), t = x.dim(1), c = x.dim(2), p = x.dim(3);
  Tensor<T> out(Shape{n, c});
  const T inv = T(1) / static_cast<T>(t * p);
  for (Index i = 0; i < n; ++i)
    for (Index ti = 0; ti < t; ++ti)
      for (Index ci = 0; ci < c; ++ci) {
        const T* src = x.value().data() + ((i * t + ti) * c + ci) * p;
        T s = T(0);
        for (Index q = 0; q < p; ++q) s += src[q];
        out[i * c + ci] += s * inv;
      }
  auto xn = x.node();
  return make_op<T>(std::move(out), {x}, [xn, n, t, c, p, inv](const Tensor<T>& grad) {
    Tensor<T> gx(xn->value.shape());
    for (Index i = 0; i < n; ++i)
      for (Index ti = 0; ti < t; ++ti)
        for (Index ci = 0; ci < c; ++ci) {
          T* dst = gx.data() + ((i * t + ti) * c + ci) * p;
          const T v = grad[i * c + ci] * inv;
          std::fill_n(dst, p, v);
        }
    xn->accumulate(std::move(gx));
  });
}

}  // namespace modgen
