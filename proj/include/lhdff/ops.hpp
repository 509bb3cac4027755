#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "lhdff/rng.hpp"
#include "lhdff/tensor.hpp"

namespace lhdff {

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;

namespace detail {

template <class S>
inline bool has_out_grad(const std::shared_ptr<TensorNode<S>>& n) {
  return n->grad.size() == n->value.size();
}

inline std::vector<size_t> strides_of(const Shape& shape) {
  std::vector<size_t> st(shape.size());
  size_t acc = 1;
  for (size_t i = shape.size(); i-- > 0;) {
    st[i] = acc;
    acc *= shape[i];
  }
  return st;
}

// out[i0..ir] = in[i_perm[0] .. i_perm[r]]; shared by permute fwd and bwd.
template <class S>
inline std::vector<S> permute_raw(const std::vector<S>& in, const Shape& in_shape,
                                  const std::vector<size_t>& perm) {
  size_t r = in_shape.size();
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
  auto in_st = strides_of(in_shape);
  auto out_st = strides_of(out_shape);
  std::vector<S> out(in.size());
  std::vector<size_t> coord(r, 0);
  for (size_t n = 0; n < in.size(); ++n) {
    size_t rem = n;
    size_t src = 0;
    for (size_t i = 0; i < r; ++i) {
      size_t c = rem / out_st[i];
      rem -= c * out_st[i];
      src += c * in_st[perm[i]];
    }
    out[n] = in[src];
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  require<ShapeError>(a.shape() == b.shape(),
                      "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = TensorT<S>::zeros(a.shape());
  auto ov = out.mutable_data();
  auto av = a.data();
  auto bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::any_tracked(tape, a, b)) {
    detail::mark_output(tape, out);
    auto an = a.node(), bn = b.node(), on = out.node();
    bool na = detail::tracked(tape, a), nb = detail::tracked(tape, b);
    tape->record([an, bn, on, na, nb]() {
      if (!detail::has_out_grad(on)) return;
      if (na) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (nb) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  require<ShapeError>(a.shape() == b.shape(),
                      "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = TensorT<S>::zeros(a.shape());
  auto ov = out.mutable_data();
  auto av = a.data();
  auto bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::any_tracked(tape, a, b)) {
    detail::mark_output(tape, out);
    auto an = a.node(), bn = b.node(), on = out.node();
    bool na = detail::tracked(tape, a), nb = detail::tracked(tape, b);
    tape->record([an, bn, on, na, nb]() {
      if (!detail::has_out_grad(on)) return;
      if (na) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (nb) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  require<ShapeError>(a.shape() == b.shape(),
                      "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = TensorT<S>::zeros(a.shape());
  auto ov = out.mutable_data();
  auto av = a.data();
  auto bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::any_tracked(tape, a, b)) {
    detail::mark_output(tape, out);
    auto an = a.node(), bn = b.node(), on = out.node();
    bool na = detail::tracked(tape, a), nb = detail::tracked(tape, b);
    tape->record([an, bn, on, na, nb]() {
      if (!detail::has_out_grad(on)) return;
      if (na) {
        an->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->value[i];
      }
      if (nb) {
        bn->ensure_grad();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->value[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> scale(const TensorT<S>& x, S c) {
  auto out = TensorT<S>::zeros(x.shape());
  auto ov = out.mutable_data();
  auto xv = x.data();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = c * xv[i];
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, c]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += c * on->grad[i];
    });
  }
  return out;
}

// Subgradient at 0 is 0.
template <class S>
TensorT<S> relu(const TensorT<S>& x) {
  auto out = TensorT<S>::zeros(x.shape());
  auto ov = out.mutable_data();
  auto xv = x.data();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > S(0) ? xv[i] : S(0);
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), on = out.node();
    tape->record([xn, on]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i)
        if (xn->value[i] > S(0)) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> sum_all(const TensorT<S>& x) {
  S acc = 0;
  for (S v : x.data()) acc += v;
  auto out = TensorT<S>::scalar(acc);
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), on = out.node();
    tape->record([xn, on]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      S g = on->grad[0];
      for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> reshape(const TensorT<S>& x, Shape shape) {
  require<ShapeError>(numel(shape) == x.size(),
                      "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  auto out = TensorT<S>(std::move(shape), std::vector<S>(x.data().begin(), x.data().end()));
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), on = out.node();
    tape->record([xn, on]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> permute(const TensorT<S>& x, const std::vector<size_t>& perm) {
  size_t r = x.rank();
  require<ShapeError>(perm.size() == r, "permute: axis list must cover all axes");
  {
    std::vector<bool> seen(r, false);
    for (size_t p : perm) {
      require<ShapeError>(p < r && !seen[p], "permute: invalid axis list");
      seen[p] = true;
    }
  }
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
  std::vector<S> data = detail::permute_raw(std::vector<S>(x.data().begin(), x.data().end()),
                                            x.shape(), perm);
  auto out = TensorT<S>(out_shape, std::move(data));
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    std::vector<size_t> inv(r);
    for (size_t i = 0; i < r; ++i) inv[perm[i]] = i;
    auto xn = x.node(), on = out.node();
    Shape oshape = out_shape;
    tape->record([xn, on, inv, oshape]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      auto g = detail::permute_raw(on->grad, oshape, inv);
      for (size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
    });
  }
  return out;
}

// x[:, :len, :] for rank-3 input.
template <class S>
TensorT<S> slice_axis1(const TensorT<S>& x, size_t len) {
  require<ShapeError>(x.rank() == 3, "slice_axis1: rank-3 input expected");
  size_t n = x.dim(0), t = x.dim(1), c = x.dim(2);
  require<ShapeError>(len >= 1 && len <= t, "slice_axis1: bad length");
  auto out = TensorT<S>::zeros({n, len, c});
  auto ov = out.mutable_data();
  auto xv = x.data();
  for (size_t i = 0; i < n; ++i)
    std::copy(xv.begin() + i * t * c, xv.begin() + (i * t + len) * c, ov.begin() + i * len * c);
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, n, t, c, len]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < len * c; ++j) xn->grad[i * t * c + j] += on->grad[i * len * c + j];
    });
  }
  return out;
}

// Zero-pads trailing frames on axis 1 of a rank-3 tensor.
template <class S>
TensorT<S> pad_axis1(const TensorT<S>& x, size_t new_t) {
  require<ShapeError>(x.rank() == 3, "pad_axis1: rank-3 input expected");
  size_t n = x.dim(0), t = x.dim(1), c = x.dim(2);
  require<ShapeError>(new_t >= t, "pad_axis1: target length smaller than input");
  if (new_t == t) return x;
  auto out = TensorT<S>::zeros({n, new_t, c});
  auto ov = out.mutable_data();
  auto xv = x.data();
  for (size_t i = 0; i < n; ++i)
    std::copy(xv.begin() + i * t * c, xv.begin() + (i + 1) * t * c, ov.begin() + i * new_t * c);
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, n, t, c, new_t]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < t * c; ++j) xn->grad[i * t * c + j] += on->grad[i * new_t * c + j];
    });
  }
  return out;
}

// Adds a constant row table, broadcast over the leading axis: x[b,l,:] += rows[l,:].
template <class S>
TensorT<S> add_row_table(const TensorT<S>& x, const std::vector<S>& rows) {
  require<ShapeError>(x.rank() == 3, "add_row_table: rank-3 input expected");
  size_t b = x.dim(0), l = x.dim(1), d = x.dim(2);
  require<ShapeError>(rows.size() >= l * d, "add_row_table: table too small");
  auto out = TensorT<S>::zeros(x.shape());
  auto ov = out.mutable_data();
  auto xv = x.data();
  for (size_t i = 0; i < b; ++i)
    for (size_t j = 0; j < l * d; ++j) ov[i * l * d + j] = xv[i * l * d + j] + rows[j];
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), on = out.node();
    tape->record([xn, on]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// Affine map over the last axis; all leading axes broadcast.
// weight is Dout x Din, matching y = x W^T + b.
template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& weight, const TensorT<S>& bias) {
  require<ShapeError>(weight.rank() == 2, "linear: weight must be rank 2");
  size_t dout = weight.dim(0), din = weight.dim(1);
  require<ShapeError>(x.rank() >= 1 && x.dim(x.rank() - 1) == din,
                      "linear: input last extent " + shape_str(x.shape()) + " != Din " +
                          std::to_string(din));
  require<ShapeError>(bias.rank() == 1 && bias.dim(0) == dout, "linear: bias/weight mismatch");
  size_t rows = x.size() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  auto out = TensorT<S>::zeros(out_shape);
  {
    ECMap<S> xm(x.data().data(), rows, din);
    ECMap<S> wm(weight.data().data(), dout, din);
    EMap<S> om(out.mutable_data().data(), rows, dout);
    om.noalias() = xm * wm.transpose();
    ECMap<S> bm(bias.data().data(), 1, dout);
    om.rowwise() += bm.row(0);
  }
  if (auto* tape = GradientTapeT<S>::current();
      tape && detail::any_tracked(tape, x, weight, bias)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), wn = weight.node(), bn = bias.node(), on = out.node();
    bool nx = detail::tracked(tape, x), nw = detail::tracked(tape, weight),
         nb = detail::tracked(tape, bias);
    tape->record([xn, wn, bn, on, nx, nw, nb, rows, din, dout]() {
      if (!detail::has_out_grad(on)) return;
      ECMap<S> gm(on->grad.data(), rows, dout);
      if (nx) {
        xn->ensure_grad();
        EMap<S> gx(xn->grad.data(), rows, din);
        ECMap<S> wm(wn->value.data(), dout, din);
        gx.noalias() += gm * wm;
      }
      if (nw) {
        wn->ensure_grad();
        EMap<S> gw(wn->grad.data(), dout, din);
        ECMap<S> xm(xn->value.data(), rows, din);
        gw.noalias() += gm.transpose() * xm;
      }
      if (nb) {
        bn->ensure_grad();
        // fixed-order accumulation; Eigen redux order depends on the runtime
        // address and would break bit-level run-to-run determinism
        for (size_t r = 0; r < rows; ++r)
          for (size_t jc = 0; jc < dout; ++jc) bn->grad[jc] += on->grad[r * dout + jc];
      }
    });
  }
  return out;
}

// Batched matrix product over the trailing two axes; leading axes must match.
template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  require<ShapeError>(a.rank() >= 2 && b.rank() == a.rank(), "matmul: rank mismatch");
  size_t r = a.rank();
  size_t m = a.dim(r - 2), k = a.dim(r - 1), k2 = b.dim(r - 2), n = b.dim(r - 1);
  require<ShapeError>(k == k2, "matmul: inner extents differ");
  size_t batch = 1;
  for (size_t i = 0; i + 2 < r; ++i) {
    require<ShapeError>(a.dim(i) == b.dim(i), "matmul: leading extents differ");
    batch *= a.dim(i);
  }
  Shape out_shape = a.shape();
  out_shape[r - 1] = n;
  auto out = TensorT<S>::zeros(out_shape);
  for (size_t i = 0; i < batch; ++i) {
    ECMap<S> am(a.data().data() + i * m * k, m, k);
    ECMap<S> bm(b.data().data() + i * k * n, k, n);
    EMap<S> om(out.mutable_data().data() + i * m * n, m, n);
    om.noalias() = am * bm;
  }
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::any_tracked(tape, a, b)) {
    detail::mark_output(tape, out);
    auto an = a.node(), bn = b.node(), on = out.node();
    bool na = detail::tracked(tape, a), nb = detail::tracked(tape, b);
    tape->record([an, bn, on, na, nb, batch, m, k, n]() {
      if (!detail::has_out_grad(on)) return;
      if (na) an->ensure_grad();
      if (nb) bn->ensure_grad();
      for (size_t i = 0; i < batch; ++i) {
        ECMap<S> gm(on->grad.data() + i * m * n, m, n);
        if (na) {
          EMap<S> ga(an->grad.data() + i * m * k, m, k);
          ECMap<S> bm(bn->value.data() + i * k * n, k, n);
          ga.noalias() += gm * bm.transpose();
        }
        if (nb) {
          EMap<S> gb(bn->grad.data() + i * k * n, k, n);
          ECMap<S> am(an->value.data() + i * m * k, m, k);
          gb.noalias() += am.transpose() * gm;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution and pooling
// ---------------------------------------------------------------------------

namespace detail {

// col is (C*9) x (H*W); padding 1, stride 1, kernel 3x3.
template <class S>
void im2col_3x3(const S* x, size_t c, size_t h, size_t w, S* col) {
  for (size_t ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        S* dst = col + ((ch * 9) + ky * 3 + kx) * (h * w);
        for (size_t y = 0; y < h; ++y) {
          long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst + y * w, dst + (y + 1) * w, S(0));
            continue;
          }
          const S* src_row = x + (ch * h + sy) * w;
          for (size_t xx = 0; xx < w; ++xx) {
            long sx = static_cast<long>(xx) + kx - 1;
            dst[y * w + xx] = (sx < 0 || sx >= static_cast<long>(w)) ? S(0) : src_row[sx];
          }
        }
      }
    }
  }
}

template <class S>
void col2im_3x3_acc(const S* col, size_t c, size_t h, size_t w, S* x_grad) {
  for (size_t ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const S* src = col + ((ch * 9) + ky * 3 + kx) * (h * w);
        for (size_t y = 0; y < h; ++y) {
          long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          S* dst_row = x_grad + (ch * h + sy) * w;
          for (size_t xx = 0; xx < w; ++xx) {
            long sx = static_cast<long>(xx) + kx - 1;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            dst_row[sx] += src[y * w + xx];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 3x3 convolution, padding 1, stride 1; output spatial size equals input.
template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& kernel, const TensorT<S>& bias) {
  require<ShapeError>(x.rank() == 4, "conv2d: input must be NCHW");
  require<ShapeError>(kernel.rank() == 4 && kernel.dim(2) == 3 && kernel.dim(3) == 3,
                      "conv2d: kernel must be C'xCx3x3");
  size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  size_t c2 = kernel.dim(0);
  require<ShapeError>(kernel.dim(1) == c, "conv2d: channel mismatch, input C=" + std::to_string(c) +
                                              " kernel C=" + std::to_string(kernel.dim(1)));
  require<ShapeError>(bias.rank() == 1 && bias.dim(0) == c2, "conv2d: bias/kernel mismatch");
  auto out = TensorT<S>::zeros({n, c2, h, w});
  std::vector<S> col(c * 9 * h * w);
  ECMap<S> km(kernel.data().data(), c2, c * 9);
  for (size_t i = 0; i < n; ++i) {
    detail::im2col_3x3(x.data().data() + i * c * h * w, c, h, w, col.data());
    ECMap<S> cm(col.data(), c * 9, h * w);
    EMap<S> om(out.mutable_data().data() + i * c2 * h * w, c2, h * w);
    om.noalias() = km * cm;
    for (size_t oc = 0; oc < c2; ++oc) om.row(oc).array() += bias.data()[oc];
  }
  if (auto* tape = GradientTapeT<S>::current();
      tape && detail::any_tracked(tape, x, kernel, bias)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), kn = kernel.node(), bn = bias.node(), on = out.node();
    bool nx = detail::tracked(tape, x), nk = detail::tracked(tape, kernel),
         nb = detail::tracked(tape, bias);
    tape->record([xn, kn, bn, on, nx, nk, nb, n, c, h, w, c2]() {
      if (!detail::has_out_grad(on)) return;
      if (nx) xn->ensure_grad();
      if (nk) kn->ensure_grad();
      if (nb) bn->ensure_grad();
      std::vector<S> col(c * 9 * h * w);
      std::vector<S> dcol(c * 9 * h * w);
      ECMap<S> km(kn->value.data(), c2, c * 9);
      for (size_t i = 0; i < n; ++i) {
        ECMap<S> gm(on->grad.data() + i * c2 * h * w, c2, h * w);
        if (nk) {
          detail::im2col_3x3(xn->value.data() + i * c * h * w, c, h, w, col.data());
          ECMap<S> cm(col.data(), c * 9, h * w);
          EMap<S> gk(kn->grad.data(), c2, c * 9);
          gk.noalias() += gm * cm.transpose();
        }
        if (nx) {
          EMap<S> dcm(dcol.data(), c * 9, h * w);
          dcm.noalias() = km.transpose() * gm;
          detail::col2im_3x3_acc(dcol.data(), c, h, w, xn->grad.data() + i * c * h * w);
        }
        if (nb) {
          // fixed-order accumulation, see linear()
          const S* g = on->grad.data() + i * c2 * h * w;
          for (size_t oc = 0; oc < c2; ++oc)
            for (size_t j = 0; j < h * w; ++j) bn->grad[oc] += g[oc * h * w + j];
        }
      }
    });
  }
  return out;
}

// 2x2 average pooling, stride 2; odd trailing rows/columns are dropped.
template <class S>
TensorT<S> avg_pool2d(const TensorT<S>& x) {
  require<ShapeError>(x.rank() == 4, "avg_pool2d: input must be NCHW");
  size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require<ShapeError>(h >= 2 && w >= 2,
                      "avg_pool2d: spatial extent below kernel, " + shape_str(x.shape()));
  size_t ho = h / 2, wo = w / 2;
  auto out = TensorT<S>::zeros({n, c, ho, wo});
  auto ov = out.mutable_data();
  auto xv = x.data();
  for (size_t i = 0; i < n * c; ++i) {
    const S* src = xv.data() + i * h * w;
    S* dst = ov.data() + i * ho * wo;
    for (size_t y = 0; y < ho; ++y)
      for (size_t xx = 0; xx < wo; ++xx)
        dst[y * wo + xx] = (src[(2 * y) * w + 2 * xx] + src[(2 * y) * w + 2 * xx + 1] +
                            src[(2 * y + 1) * w + 2 * xx] + src[(2 * y + 1) * w + 2 * xx + 1]) /
                           S(4);
  }
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, n, c, h, w, ho, wo]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      for (size_t i = 0; i < n * c; ++i) {
        const S* g = on->grad.data() + i * ho * wo;
        S* dx = xn->grad.data() + i * h * w;
        for (size_t y = 0; y < ho; ++y)
          for (size_t xx = 0; xx < wo; ++xx) {
            S q = g[y * wo + xx] / S(4);
            dx[(2 * y) * w + 2 * xx] += q;
            dx[(2 * y) * w + 2 * xx + 1] += q;
            dx[(2 * y + 1) * w + 2 * xx] += q;
            dx[(2 * y + 1) * w + 2 * xx + 1] += q;
          }
      }
    });
  }
  return out;
}

// Pairwise mean over axis 1 of a rank-3 tensor (window 2, stride 2, floor).
template <class S>
TensorT<S> avg_pool_time(const TensorT<S>& x) {
  require<ShapeError>(x.rank() == 3, "avg_pool_time: rank-3 input expected");
  size_t n = x.dim(0), t = x.dim(1), c = x.dim(2);
  require<ShapeError>(t >= 2, "avg_pool_time: time extent below kernel");
  size_t to = t / 2;
  auto out = TensorT<S>::zeros({n, to, c});
  auto ov = out.mutable_data();
  auto xv = x.data();
  for (size_t i = 0; i < n; ++i)
    for (size_t y = 0; y < to; ++y)
      for (size_t j = 0; j < c; ++j)
        ov[(i * to + y) * c + j] =
            (xv[(i * t + 2 * y) * c + j] + xv[(i * t + 2 * y + 1) * c + j]) / S(2);
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, n, t, c, to]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t y = 0; y < to; ++y)
          for (size_t j = 0; j < c; ++j) {
            S q = on->grad[(i * to + y) * c + j] / S(2);
            xn->grad[(i * t + 2 * y) * c + j] += q;
            xn->grad[(i * t + 2 * y + 1) * c + j] += q;
          }
    });
  }
  return out;
}

// Global average pooling along the frequency axis: NCHW -> N x H x C.
template <class S>
TensorT<S> freq_mean(const TensorT<S>& x) {
  require<ShapeError>(x.rank() == 4, "freq_mean: input must be NCHW");
  size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto out = TensorT<S>::zeros({n, h, c});
  auto ov = out.mutable_data();
  auto xv = x.data();
  for (size_t i = 0; i < n; ++i)
    for (size_t ch = 0; ch < c; ++ch)
      for (size_t y = 0; y < h; ++y) {
        const S* row = xv.data() + ((i * c + ch) * h + y) * w;
        S acc = 0;
        for (size_t xx = 0; xx < w; ++xx) acc += row[xx];
        ov[(i * h + y) * c + ch] = acc / S(w);
      }
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, n, c, h, w]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      for (size_t i = 0; i < n; ++i)
        for (size_t ch = 0; ch < c; ++ch)
          for (size_t y = 0; y < h; ++y) {
            S g = on->grad[(i * h + y) * c + ch] / S(w);
            S* row = xn->grad.data() + ((i * c + ch) * h + y) * w;
            for (size_t xx = 0; xx < w; ++xx) row[xx] += g;
          }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Batch statistics cover N, H and W per channel; running stats use the same
// biased variance and are updated only in training mode.
template <class S>
TensorT<S> batch_norm2d(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                        TensorT<S>& running_mean, TensorT<S>& running_var, S momentum, S eps,
                        bool training) {
  require<ShapeError>(x.rank() == 4, "batch_norm2d: input must be NCHW");
  size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require<ShapeError>(gamma.rank() == 1 && gamma.dim(0) == c && beta.dim(0) == c,
                      "batch_norm2d: gamma/beta must match channel count");
  size_t m = n * h * w;
  require<NumericError>(m >= 1, "batch_norm2d: degenerate statistics, empty batch-by-spatial extent");

  std::vector<S> mean(c), invstd(c);
  if (training) {
    for (size_t ch = 0; ch < c; ++ch) {
      double acc = 0;
      for (size_t i = 0; i < n; ++i) {
        const S* plane = x.data().data() + ((i * c + ch) * h) * w;
        for (size_t j = 0; j < h * w; ++j) acc += plane[j];
      }
      S mu = static_cast<S>(acc / m);
      double vacc = 0;
      for (size_t i = 0; i < n; ++i) {
        const S* plane = x.data().data() + ((i * c + ch) * h) * w;
        for (size_t j = 0; j < h * w; ++j) {
          double d = plane[j] - mu;
          vacc += d * d;
        }
      }
      S var = static_cast<S>(vacc / m);
      mean[ch] = mu;
      invstd[ch] = S(1) / std::sqrt(var + eps);
      running_mean.mutable_data()[ch] = (S(1) - momentum) * running_mean.data()[ch] + momentum * mu;
      running_var.mutable_data()[ch] = (S(1) - momentum) * running_var.data()[ch] + momentum * var;
    }
  } else {
    for (size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean.data()[ch];
      invstd[ch] = S(1) / std::sqrt(running_var.data()[ch] + eps);
    }
  }

  auto out = TensorT<S>::zeros(x.shape());
  auto ov = out.mutable_data();
  auto xv = x.data();
  for (size_t i = 0; i < n; ++i)
    for (size_t ch = 0; ch < c; ++ch) {
      S mu = mean[ch], is = invstd[ch], g = gamma.data()[ch], b = beta.data()[ch];
      const S* src = xv.data() + ((i * c + ch) * h) * w;
      S* dst = ov.data() + ((i * c + ch) * h) * w;
      for (size_t j = 0; j < h * w; ++j) dst[j] = g * (src[j] - mu) * is + b;
    }

  if (auto* tape = GradientTapeT<S>::current();
      tape && detail::any_tracked(tape, x, gamma, beta)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    bool nx = detail::tracked(tape, x), ng = detail::tracked(tape, gamma),
         nb = detail::tracked(tape, beta);
    tape->record([xn, gn, bn, on, nx, ng, nb, n, c, h, w, m, mean, invstd, training]() {
      if (!detail::has_out_grad(on)) return;
      if (nx) xn->ensure_grad();
      if (ng) gn->ensure_grad();
      if (nb) bn->ensure_grad();
      size_t hw = h * w;
      for (size_t ch = 0; ch < c; ++ch) {
        S mu = mean[ch], is = invstd[ch], g = gn->value[ch];
        // reductions over the normalization set
        double sum_dy = 0, sum_dy_xhat = 0;
        for (size_t i = 0; i < n; ++i) {
          const S* dy = on->grad.data() + ((i * c + ch) * hw);
          const S* xx = xn->value.data() + ((i * c + ch) * hw);
          for (size_t j = 0; j < hw; ++j) {
            S xhat = (xx[j] - mu) * is;
            sum_dy += dy[j];
            sum_dy_xhat += dy[j] * xhat;
          }
        }
        if (ng) gn->grad[ch] += static_cast<S>(sum_dy_xhat);
        if (nb) bn->grad[ch] += static_cast<S>(sum_dy);
        if (nx) {
          S mean_dy = static_cast<S>(sum_dy / m);
          S mean_dy_xhat = static_cast<S>(sum_dy_xhat / m);
          for (size_t i = 0; i < n; ++i) {
            const S* dy = on->grad.data() + ((i * c + ch) * hw);
            const S* xx = xn->value.data() + ((i * c + ch) * hw);
            S* dx = xn->grad.data() + ((i * c + ch) * hw);
            if (training) {
              for (size_t j = 0; j < hw; ++j) {
                S xhat = (xx[j] - mu) * is;
                dx[j] += g * is * (dy[j] - mean_dy - xhat * mean_dy_xhat);
              }
            } else {
              for (size_t j = 0; j < hw; ++j) dx[j] += g * is * dy[j];
            }
          }
        }
      }
    });
  }
  return out;
}

// LayerNorm over the last axis.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps = S(1e-5)) {
  size_t d = x.dim(x.rank() - 1);
  require<ShapeError>(gamma.dim(0) == d && beta.dim(0) == d, "layer_norm: gamma/beta mismatch");
  size_t rows = x.size() / d;
  auto out = TensorT<S>::zeros(x.shape());
  std::vector<S> means(rows), invstds(rows);
  auto xv = x.data();
  auto ov = out.mutable_data();
  for (size_t r = 0; r < rows; ++r) {
    const S* src = xv.data() + r * d;
    double acc = 0;
    for (size_t j = 0; j < d; ++j) acc += src[j];
    S mu = static_cast<S>(acc / d);
    double vacc = 0;
    for (size_t j = 0; j < d; ++j) {
      double dv = src[j] - mu;
      vacc += dv * dv;
    }
    S is = S(1) / std::sqrt(static_cast<S>(vacc / d) + eps);
    means[r] = mu;
    invstds[r] = is;
    S* dst = ov.data() + r * d;
    for (size_t j = 0; j < d; ++j) dst[j] = gamma.data()[j] * (src[j] - mu) * is + beta.data()[j];
  }
  if (auto* tape = GradientTapeT<S>::current();
      tape && detail::any_tracked(tape, x, gamma, beta)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    bool nx = detail::tracked(tape, x), ng = detail::tracked(tape, gamma),
         nb = detail::tracked(tape, beta);
    tape->record([xn, gn, bn, on, nx, ng, nb, rows, d, means, invstds]() {
      if (!detail::has_out_grad(on)) return;
      if (nx) xn->ensure_grad();
      if (ng) gn->ensure_grad();
      if (nb) bn->ensure_grad();
      for (size_t r = 0; r < rows; ++r) {
        const S* dy = on->grad.data() + r * d;
        const S* xx = xn->value.data() + r * d;
        S mu = means[r], is = invstds[r];
        double sum_dyg = 0, sum_dyg_xhat = 0;
        for (size_t j = 0; j < d; ++j) {
          S xhat = (xx[j] - mu) * is;
          S dyg = dy[j] * gn->value[j];
          sum_dyg += dyg;
          sum_dyg_xhat += dyg * xhat;
          if (ng) gn->grad[j] += dy[j] * xhat;
          if (nb) bn->grad[j] += dy[j];
        }
        if (nx) {
          S m1 = static_cast<S>(sum_dyg / d), m2 = static_cast<S>(sum_dyg_xhat / d);
          S* dx = xn->grad.data() + r * d;
          for (size_t j = 0; j < d; ++j) {
            S xhat = (xx[j] - mu) * is;
            dx[j] += is * (dy[j] * gn->value[j] - m1 - xhat * m2);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

// Stable log-softmax over the last axis (max subtraction).
template <class S>
TensorT<S> log_softmax(const TensorT<S>& x) {
  size_t m = x.dim(x.rank() - 1);
  size_t rows = x.size() / m;
  auto out = TensorT<S>::zeros(x.shape());
  auto xv = x.data();
  auto ov = out.mutable_data();
  for (size_t r = 0; r < rows; ++r) {
    const S* src = xv.data() + r * m;
    S mx = src[0];
    for (size_t j = 1; j < m; ++j) mx = std::max(mx, src[j]);
    double acc = 0;
    for (size_t j = 0; j < m; ++j) acc += std::exp(static_cast<double>(src[j] - mx));
    double lse = static_cast<double>(mx) + std::log(acc);
    S* dst = ov.data() + r * m;
    for (size_t j = 0; j < m; ++j) dst[j] = static_cast<S>(static_cast<double>(src[j]) - lse);
  }
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, rows, m]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      for (size_t r = 0; r < rows; ++r) {
        const S* g = on->grad.data() + r * m;
        const S* y = on->value.data() + r * m;
        S* dx = xn->grad.data() + r * m;
        double gsum = 0;
        for (size_t j = 0; j < m; ++j) gsum += g[j];
        for (size_t j = 0; j < m; ++j)
          dx[j] += g[j] - std::exp(static_cast<double>(y[j])) * static_cast<S>(gsum);
      }
    });
  }
  return out;
}

// Attention mask over score rows. Masked keys receive exactly zero weight; the
// masked entries never enter the max or the normalizing sum, so outputs stay
// finite without sentinel -inf logits.
struct AttnMask {
  enum class Kind { None, Causal, KeyValid };
  Kind kind = Kind::None;
  std::vector<int> key_valid;  // per batch item, for KeyValid

  static AttnMask none() { return {}; }
  static AttnMask causal() { return {Kind::Causal, {}}; }
  static AttnMask from_key_valid(std::vector<int> v) { return {Kind::KeyValid, std::move(v)}; }
};

// Softmax over the last axis of (B, H, Lq, Lk) scores with masking.
template <class S>
TensorT<S> masked_softmax(const TensorT<S>& scores, const AttnMask& mask) {
  require<ShapeError>(scores.rank() == 4, "masked_softmax: expected B x H x Lq x Lk scores");
  size_t b = scores.dim(0), nh = scores.dim(1), lq = scores.dim(2), lk = scores.dim(3);
  if (mask.kind == AttnMask::Kind::Causal)
    require<ShapeError>(lq == lk, "masked_softmax: causal mask needs square scores");
  if (mask.kind == AttnMask::Kind::KeyValid)
    require<ShapeError>(mask.key_valid.size() == b, "masked_softmax: key_valid size mismatch");

  auto out = TensorT<S>::zeros(scores.shape());
  auto xv = scores.data();
  auto ov = out.mutable_data();
  for (size_t i = 0; i < b; ++i) {
    size_t valid = lk;
    if (mask.kind == AttnMask::Kind::KeyValid) {
      valid = static_cast<size_t>(mask.key_valid[i]);
      require<ShapeError>(valid >= 1 && valid <= lk, "masked_softmax: invalid key_valid entry");
    }
    for (size_t hh = 0; hh < nh; ++hh)
      for (size_t q = 0; q < lq; ++q) {
        size_t row = ((i * nh + hh) * lq + q) * lk;
        size_t allowed = (mask.kind == AttnMask::Kind::Causal) ? q + 1 : valid;
        const S* src = xv.data() + row;
        S mx = src[0];
        for (size_t k = 1; k < allowed; ++k) mx = std::max(mx, src[k]);
        double acc = 0;
        for (size_t k = 0; k < allowed; ++k) acc += std::exp(static_cast<double>(src[k] - mx));
        S* dst = ov.data() + row;
        for (size_t k = 0; k < allowed; ++k)
          dst[k] = static_cast<S>(std::exp(static_cast<double>(src[k] - mx)) / acc);
        // remaining entries stay exactly zero
      }
  }
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, scores)) {
    detail::mark_output(tape, out);
    auto xn = scores.node(), on = out.node();
    tape->record([xn, on, b, nh, lq, lk]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      size_t rows = b * nh * lq;
      for (size_t r = 0; r < rows; ++r) {
        const S* g = on->grad.data() + r * lk;
        const S* y = on->value.data() + r * lk;
        S* dx = xn->grad.data() + r * lk;
        double dot = 0;
        for (size_t k = 0; k < lk; ++k) dot += g[k] * y[k];
        for (size_t k = 0; k < lk; ++k) dx[k] += y[k] * (g[k] - static_cast<S>(dot));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Token ops
// ---------------------------------------------------------------------------

// Row gather from an embedding matrix; out shape is leading + {d}.
template <class S>
TensorT<S> embedding(const TensorT<S>& table, const std::vector<int32_t>& ids, Shape leading) {
  require<ShapeError>(table.rank() == 2, "embedding: table must be V x d");
  size_t v = table.dim(0), d = table.dim(1);
  require<ShapeError>(numel(leading) == ids.size(), "embedding: id count mismatch");
  for (int32_t id : ids)
    require<IndexError>(id >= 0 && static_cast<size_t>(id) < v,
                        "embedding: token id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(v) + ")");
  Shape out_shape = leading;
  out_shape.push_back(d);
  auto out = TensorT<S>::zeros(out_shape);
  auto ov = out.mutable_data();
  auto tv = table.data();
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(tv.begin() + ids[i] * d, tv.begin() + (ids[i] + 1) * d, ov.begin() + i * d);
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, table)) {
    detail::mark_output(tape, out);
    auto tn = table.node(), on = out.node();
    tape->record([tn, on, ids, d]() {
      if (!detail::has_out_grad(on)) return;
      tn->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i)
        for (size_t j = 0; j < d; ++j) tn->grad[ids[i] * d + j] += on->grad[i * d + j];
    });
  }
  return out;
}

// Inverted dropout; identity when p == 0. Training callers own the stream.
template <class S>
TensorT<S> dropout(const TensorT<S>& x, double p, RngStream& rng) {
  require<ConfigError>(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  auto keep = std::make_shared<std::vector<uint8_t>>(x.size());
  S inv = static_cast<S>(1.0 / (1.0 - p));
  auto out = TensorT<S>::zeros(x.shape());
  auto ov = out.mutable_data();
  auto xv = x.data();
  for (size_t i = 0; i < xv.size(); ++i) {
    (*keep)[i] = rng.uniform01() >= p;
    ov[i] = (*keep)[i] ? xv[i] * inv : S(0);
  }
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, x)) {
    detail::mark_output(tape, out);
    auto xn = x.node(), on = out.node();
    tape->record([xn, on, keep, inv]() {
      if (!detail::has_out_grad(on)) return;
      xn->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i)
        if ((*keep)[i]) xn->grad[i] += on->grad[i] * inv;
    });
  }
  return out;
}

// Mean negative log-probability of target tokens, ignoring pad positions.
// log_probs is (B, L, m); targets is a row-major B*L id list.
template <class S>
TensorT<S> nll_masked(const TensorT<S>& log_probs, const std::vector<int32_t>& targets,
                      int32_t pad_id) {
  require<ShapeError>(log_probs.rank() == 3, "nll_masked: expected B x L x m log-probs");
  size_t b = log_probs.dim(0), l = log_probs.dim(1), m = log_probs.dim(2);
  require<ShapeError>(targets.size() == b * l, "nll_masked: target count mismatch");
  size_t t_tok = 0;
  double acc = 0;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == pad_id) continue;
    require<IndexError>(targets[i] >= 0 && static_cast<size_t>(targets[i]) < m,
                        "nll_masked: target id out of range");
    ++t_tok;
    acc += log_probs.data()[i * m + targets[i]];
  }
  require<NumericError>(t_tok >= 1, "nll_masked: degenerate batch, every target is padding");
  auto out = TensorT<S>::scalar(static_cast<S>(-acc / t_tok));
  if (auto* tape = GradientTapeT<S>::current(); tape && detail::tracked(tape, log_probs)) {
    detail::mark_output(tape, out);
    auto pn = log_probs.node(), on = out.node();
    tape->record([pn, on, targets, pad_id, m, t_tok]() {
      if (!detail::has_out_grad(on)) return;
      pn->ensure_grad();
      S g = -on->grad[0] / static_cast<S>(t_tok);
      for (size_t i = 0; i < targets.size(); ++i)
        if (targets[i] != pad_id) pn->grad[i * m + targets[i]] += g;
    });
  }
  return out;
}

}  // namespace lhdff
