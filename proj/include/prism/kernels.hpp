#pragma once

// Eager numeric kernels behind the autograd primitives. Each function takes
// and returns plain tensors; shape validation happens in the graph layer.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "prism/tensor.hpp"

namespace prism::kernels {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Kernel3 = std::array<Index, 3>;

// Splits `shape` around `axis` into (outer, extent, inner).
inline std::array<Index, 3> split_axis(const Shape& shape, int axis) {
  Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
  return {outer, shape[static_cast<std::size_t>(axis)], inner};
}

template <typename S>
BasicTensor<S> matmul(const BasicTensor<S>& a, const BasicTensor<S>& b) {
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<S> out(Shape{m, n});
  Eigen::Map<const RowMatrix<S>> A(a.data(), m, k);
  Eigen::Map<const RowMatrix<S>> B(b.data(), k, n);
  Eigen::Map<RowMatrix<S>> C(out.data(), m, n);
  C.noalias() = A * B;
  return out;
}

template <typename S>
BasicTensor<S> transpose(const BasicTensor<S>& a) {
  const Index m = a.dim(0), n = a.dim(1);
  BasicTensor<S> out(Shape{n, m});
  Eigen::Map<const RowMatrix<S>> A(a.data(), m, n);
  Eigen::Map<RowMatrix<S>> C(out.data(), n, m);
  C = A.transpose();
  return out;
}

// ---------------------------------------------------------------------------
// 3D cross-correlation, stride 1, zero "same" padding (odd kernels).
// Input [B,T,H,W,Ci], weight [kT,kH,kW,Ci,Co], output [B,T,H,W,Co].
// Lowered to one GEMM per call through a patch matrix whose columns follow
// the weight layout (dt, dh, dw, ci).

struct ConvGeometry {
  Index batch, frames, height, width, in_channels, out_channels;
  Kernel3 kernel;

  Index positions() const { return batch * frames * height * width; }
  Index patch() const { return kernel[0] * kernel[1] * kernel[2] * in_channels; }
};

template <typename S>
RowMatrix<S> im2col(const BasicTensor<S>& x, const ConvGeometry& g) {
  const Index pt = g.kernel[0] / 2, ph = g.kernel[1] / 2, pw = g.kernel[2] / 2;
  RowMatrix<S> cols = RowMatrix<S>::Zero(g.positions(), g.patch());
  const S* src = x.data();
  Index row = 0;
  for (Index b = 0; b < g.batch; ++b)
    for (Index t = 0; t < g.frames; ++t)
      for (Index h = 0; h < g.height; ++h)
        for (Index w = 0; w < g.width; ++w, ++row) {
          S* dst = cols.data() + row * g.patch();
          for (Index dt = 0; dt < g.kernel[0]; ++dt) {
            const Index tt = t + dt - pt;
            for (Index dh = 0; dh < g.kernel[1]; ++dh) {
              const Index hh = h + dh - ph;
              for (Index dw = 0; dw < g.kernel[2]; ++dw) {
                const Index ww = w + dw - pw;
                S* cell = dst + ((dt * g.kernel[1] + dh) * g.kernel[2] + dw) * g.in_channels;
                if (tt < 0 || tt >= g.frames || hh < 0 || hh >= g.height || ww < 0 || ww >= g.width) continue;
                const S* px = src + (((b * g.frames + tt) * g.height + hh) * g.width + ww) * g.in_channels;
                std::copy(px, px + g.in_channels, cell);
              }
            }
          }
        }
  return cols;
}

template <typename S>
void col2im_add(const RowMatrix<S>& cols, const ConvGeometry& g, BasicTensor<S>& x) {
  const Index pt = g.kernel[0] / 2, ph = g.kernel[1] / 2, pw = g.kernel[2] / 2;
  S* dst = x.data();
  Index row = 0;
  for (Index b = 0; b < g.batch; ++b)
    for (Index t = 0; t < g.frames; ++t)
      for (Index h = 0; h < g.height; ++h)
        for (Index w = 0; w < g.width; ++w, ++row) {
          const S* src = cols.data() + row * g.patch();
          for (Index dt = 0; dt < g.kernel[0]; ++dt) {
            const Index tt = t + dt - pt;
            if (tt < 0 || tt >= g.frames) continue;
            for (Index dh = 0; dh < g.kernel[1]; ++dh) {
              const Index hh = h + dh - ph;
              if (hh < 0 || hh >= g.height) continue;
              for (Index dw = 0; dw < g.kernel[2]; ++dw) {
                const Index ww = w + dw - pw;
                if (ww < 0 || ww >= g.width) continue;
                const S* cell = src + ((dt * g.kernel[1] + dh) * g.kernel[2] + dw) * g.in_channels;
                S* px = dst + (((b * g.frames + tt) * g.height + hh) * g.width + ww) * g.in_channels;
                for (Index c = 0; c < g.in_channels; ++c) px[c] += cell[c];
              }
            }
          }
        }
}

template <typename S>
BasicTensor<S> conv3d(const BasicTensor<S>& x, const BasicTensor<S>& w) {
  const ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4), w.dim(4), {w.dim(0), w.dim(1), w.dim(2)}};
  const RowMatrix<S> cols = im2col(x, g);
  BasicTensor<S> out(Shape{g.batch, g.frames, g.height, g.width, g.out_channels});
  Eigen::Map<const RowMatrix<S>> W(w.data(), g.patch(), g.out_channels);
  Eigen::Map<RowMatrix<S>> Y(out.data(), g.positions(), g.out_channels);
  Y.noalias() = cols * W;
  return out;
}

// Adjoint of conv3d in its input: grad_out [B,T,H,W,Co], weight -> [B,T,H,W,Ci].
template <typename S>
BasicTensor<S> conv3d_input_grad(const BasicTensor<S>& grad_out, const BasicTensor<S>& w) {
  const ConvGeometry g{grad_out.dim(0), grad_out.dim(1), grad_out.dim(2), grad_out.dim(3),
                       w.dim(3),        w.dim(4),        {w.dim(0), w.dim(1), w.dim(2)}};
  Eigen::Map<const RowMatrix<S>> G(grad_out.data(), g.positions(), g.out_channels);
  Eigen::Map<const RowMatrix<S>> W(w.data(), g.patch(), g.out_channels);
  RowMatrix<S> cols(g.positions(), g.patch());
  cols.noalias() = G * W.transpose();
  BasicTensor<S> out(Shape{g.batch, g.frames, g.height, g.width, g.in_channels});
  col2im_add(cols, g, out);
  return out;
}

// Adjoint of conv3d in its weight: input, grad_out -> [kT,kH,kW,Ci,Co].
template <typename S>
BasicTensor<S> conv3d_weight_grad(const BasicTensor<S>& x, const BasicTensor<S>& grad_out, const Kernel3& kernel) {
  const ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4), grad_out.dim(4), kernel};
  const RowMatrix<S> cols = im2col(x, g);
  Eigen::Map<const RowMatrix<S>> G(grad_out.data(), g.positions(), g.out_channels);
  BasicTensor<S> out(Shape{kernel[0], kernel[1], kernel[2], g.in_channels, g.out_channels});
  Eigen::Map<RowMatrix<S>> Wg(out.data(), g.patch(), g.out_channels);
  Wg.noalias() = cols.transpose() * G;
  return out;
}

// ---------------------------------------------------------------------------
// 2x spatial mean-pool on [B,T,H,W,C] (H, W even) and its adjoint.

template <typename S>
BasicTensor<S> avg_pool2(const BasicTensor<S>& x) {
  const Index B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  const Index Ho = H / 2, Wo = W / 2;
  BasicTensor<S> out(Shape{B, T, Ho, Wo, C});
  for (Index bt = 0; bt < B * T; ++bt)
    for (Index h = 0; h < Ho; ++h)
      for (Index w = 0; w < Wo; ++w)
        for (Index c = 0; c < C; ++c) {
          auto at = [&](Index hh, Index ww) { return x[((bt * H + hh) * W + ww) * C + c]; };
          out[((bt * Ho + h) * Wo + w) * C + c] =
              S(0.25) * (at(2 * h, 2 * w) + at(2 * h, 2 * w + 1) + at(2 * h + 1, 2 * w) + at(2 * h + 1, 2 * w + 1));
        }
  return out;
}

template <typename S>
BasicTensor<S> avg_pool2_adjoint(const BasicTensor<S>& g) {
  const Index B = g.dim(0), T = g.dim(1), Ho = g.dim(2), Wo = g.dim(3), C = g.dim(4);
  const Index H = 2 * Ho, W = 2 * Wo;
  BasicTensor<S> out(Shape{B, T, H, W, C});
  for (Index bt = 0; bt < B * T; ++bt)
    for (Index h = 0; h < H; ++h)
      for (Index w = 0; w < W; ++w)
        for (Index c = 0; c < C; ++c)
          out[((bt * H + h) * W + w) * C + c] = S(0.25) * g[((bt * Ho + h / 2) * Wo + w / 2) * C + c];
  return out;
}

// 2x spatial max-pool; `argmax` receives the flat input index of each winner.
template <typename S>
BasicTensor<S> max_pool2(const BasicTensor<S>& x, std::vector<Index>& argmax) {
  const Index B = x.dim(0), T = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  const Index Ho = H / 2, Wo = W / 2;
  BasicTensor<S> out(Shape{B, T, Ho, Wo, C});
  argmax.assign(static_cast<std::size_t>(out.size()), 0);
  for (Index bt = 0; bt < B * T; ++bt)
    for (Index h = 0; h < Ho; ++h)
      for (Index w = 0; w < Wo; ++w)
        for (Index c = 0; c < C; ++c) {
          Index best = ((bt * H + 2 * h) * W + 2 * w) * C + c;
          for (Index dh = 0; dh < 2; ++dh)
            for (Index dw = 0; dw < 2; ++dw) {
              const Index i = ((bt * H + 2 * h + dh) * W + 2 * w + dw) * C + c;
              if (x[i] > x[best]) best = i;
            }
          const Index o = ((bt * Ho + h) * Wo + w) * C + c;
          out[o] = x[best];
          argmax[static_cast<std::size_t>(o)] = best;
        }
  return out;
}

// ---------------------------------------------------------------------------
// Axis reductions. Accumulation in double.

template <typename S>
BasicTensor<S> sum_axis(const BasicTensor<S>& x, int axis) {
  const auto [outer, extent, inner] = split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + axis);
  if (shape.empty()) shape = {1};
  BasicTensor<S> out(shape);
  std::vector<double> acc(static_cast<std::size_t>(inner));
  for (Index o = 0; o < outer; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (Index e = 0; e < extent; ++e) {
      const S* row = x.data() + (o * extent + e) * inner;
      for (Index i = 0; i < inner; ++i) acc[static_cast<std::size_t>(i)] += row[i];
    }
    for (Index i = 0; i < inner; ++i) out[o * inner + i] = static_cast<S>(acc[static_cast<std::size_t>(i)]);
  }
  return out;
}

// Inverse of sum_axis: replicates x along `axis` to produce `shape`.
template <typename S>
BasicTensor<S> broadcast_axis(const BasicTensor<S>& x, int axis, const Shape& shape) {
  const auto [outer, ext, inner] = split_axis(shape, axis);
  BasicTensor<S> out(shape);
  for (Index o = 0; o < outer; ++o)
    for (Index e = 0; e < ext; ++e) std::copy_n(x.data() + o * inner, inner, out.data() + (o * ext + e) * inner);
  return out;
}

template <typename S>
double sum_all(const BasicTensor<S>& x) {
  double acc = 0.0;
  for (Index i = 0; i < x.size(); ++i) acc += x[i];
  return acc;
}

template <typename S>
BasicTensor<S> bias_add(const BasicTensor<S>& x, const BasicTensor<S>& b) {
  BasicTensor<S> out = x;
  const Index c = b.size();
  for (Index i = 0; i < out.size(); ++i) out[i] += b[i % c];
  return out;
}

// Row-wise softmax of [N,K].
template <typename S>
BasicTensor<S> softmax(const BasicTensor<S>& z) {
  const Index n = z.dim(0), k = z.dim(1);
  BasicTensor<S> out(z.shape());
  for (Index r = 0; r < n; ++r) {
    const S* row = z.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (Index j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    for (Index j = 0; j < k; ++j) out[r * k + j] = static_cast<S>(std::exp(static_cast<double>(row[j]) - mx) / denom);
  }
  return out;
}

// Mean over rows of -log softmax(z)[label].
template <typename S>
S softmax_cross_entropy(const BasicTensor<S>& z, const std::vector<int>& labels) {
  const Index n = z.dim(0), k = z.dim(1);
  double total = 0.0;
  for (Index r = 0; r < n; ++r) {
    const S* row = z.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (Index j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    total += std::log(denom) + mx - static_cast<double>(row[labels[static_cast<std::size_t>(r)]]);
  }
  return static_cast<S>(total / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Slicing along one axis.

template <typename S>
BasicTensor<S> slice(const BasicTensor<S>& x, int axis, Index start, Index length) {
  const auto [outer, extent, inner] = split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = length;
  BasicTensor<S> out(shape);
  for (Index o = 0; o < outer; ++o)
    std::copy_n(x.data() + (o * extent + start) * inner, length * inner, out.data() + o * length * inner);
  return out;
}

template <typename S>
BasicTensor<S> pad_slice(const BasicTensor<S>& x, int axis, Index start, Index full_extent) {
  const auto [outer, length, inner] = split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = full_extent;
  BasicTensor<S> out(shape);
  for (Index o = 0; o < outer; ++o)
    std::copy_n(x.data() + o * length * inner, length * inner, out.data() + (o * full_extent + start) * inner);
  return out;
}

template <typename S>
BasicTensor<S> concat(const std::vector<const BasicTensor<S>*>& parts, int axis) {
  Shape shape = parts.front()->shape();
  Index total = 0;
  for (const auto* p : parts) total += p->dim(axis);
  shape[static_cast<std::size_t>(axis)] = total;
  BasicTensor<S> out(shape);
  const auto [outer, extent, inner] = split_axis(shape, axis);
  Index offset = 0;
  for (const auto* p : parts) {
    const Index len = p->dim(axis);
    for (Index o = 0; o < outer; ++o)
      std::copy_n(p->data() + o * len * inner, len * inner, out.data() + (o * extent + offset) * inner);
    offset += len;
  }
  return out;
}

}  // namespace prism::kernels
