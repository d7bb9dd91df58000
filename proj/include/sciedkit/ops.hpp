#pragma once

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <vector>

#include "sciedkit/parallel.hpp"
#include "sciedkit/rng.hpp"
#include "sciedkit/tensor.hpp"

namespace sciedkit {

// Additive attention bias at PAD columns; exp() underflows to exactly 0,
// so rows stay normalized and PAD never leaks into real positions.
inline constexpr double kMaskBias = -1e9;

namespace detail {

// C += A[m,k] * B[k,n], row-major. Per-element accumulation order is fixed
// (k ascending), so the result is independent of the row partition.
template <typename T>
void gemm_serial(const T* a, const T* b, T* c, size_t m, size_t n, size_t k,
                 size_t i0, size_t i1) {
  for (size_t i = i0; i < i1; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + kk * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
std::vector<T> transpose_copy(const T* src, size_t rows, size_t cols) {
  std::vector<T> out(rows * cols);
  for (size_t i = 0; i < rows; ++i) {
    for (size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * cols + j];
  }
  return out;
}

// C += op(A) * op(B) with stored dims (ar x ac), (br x bc).
template <typename T>
void gemm_acc(const T* a, size_t ar, size_t ac, bool ta, const T* b, size_t br,
              size_t bc, bool tb, T* c, bool parallel = true) {
  const size_t m = ta ? ac : ar;
  const size_t k = ta ? ar : ac;
  const size_t n = tb ? br : bc;
  std::vector<T> at, bt;
  const T* ae = a;
  const T* be = b;
  if (ta) {
    at = transpose_copy(a, ar, ac);
    ae = at.data();
  }
  if (tb) {
    bt = transpose_copy(b, br, bc);
    be = bt.data();
  }
  if (parallel && m * n * k >= 65536) {
    parallel_for(m, 16, [&](size_t i0, size_t i1) { gemm_serial(ae, be, c, m, n, k, i0, i1); });
  } else {
    gemm_serial(ae, be, c, m, n, k, 0, m);
  }
}

template <typename T>
bool all_finite(const std::vector<T>& v) {
  for (T x : v) {
    if (!std::isfinite(static_cast<double>(x))) return false;
  }
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: 2-D matrix product with optional operand transposes.
// Backward: dA = G*op(B)^T, dB = op(A)^T*G (adjusted for stored layouts).
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape = nullptr,
                 bool trans_a = false, bool trans_b = false) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw InputError("matmul expects 2-d tensors, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const size_t m = trans_a ? a.dim(1) : a.dim(0);
  const size_t k = trans_a ? a.dim(0) : a.dim(1);
  const size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw InputError("matmul dimension mismatch: " + shape_str(a.shape()) +
                     (trans_a ? "^T" : "") + " * " + shape_str(b.shape()) +
                     (trans_b ? "^T" : ""));
  }
  Tensor<T> out = Tensor<T>::zeros({m, n});
  detail::gemm_acc(a.data(), a.dim(0), a.dim(1), trans_a, b.data(), b.dim(0), b.dim(1),
                   trans_b, out.data());
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto od = out.ptr();
    tape->record([ad, bd, od, trans_a, trans_b, m, n, k] {
      if (od->grad.empty()) return;
      const T* g = od->grad.data();
      if (ad->requires_grad) {
        if (ad->grad.empty()) ad->grad.assign(ad->values.size(), T(0));
        if (!trans_a) {
          // dA = G * op(B)^T
          detail::gemm_acc(g, m, n, false, bd->values.data(), bd->shape[0], bd->shape[1],
                           !trans_b, ad->grad.data());
        } else {
          // stored A is the transpose: dA_stored = op(B) * G^T
          detail::gemm_acc(bd->values.data(), bd->shape[0], bd->shape[1], trans_b, g, m, n,
                           true, ad->grad.data());
        }
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->values.size(), T(0));
        if (!trans_b) {
          // dB = op(A)^T * G
          detail::gemm_acc(ad->values.data(), ad->shape[0], ad->shape[1], !trans_a, g, m, n,
                           false, bd->grad.data());
        } else {
          // stored B is the transpose: dB_stored = G^T * op(A)
          detail::gemm_acc(g, m, n, true, ad->values.data(), ad->shape[0], ad->shape[1],
                           trans_a, bd->grad.data());
        }
      }
    });
  }
  return out;
}

// Batched matmul over equal leading group count: [G,m,k] x [G,k,n] (trans_b
// flips the second operand to [G,n,k]).
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape = nullptr,
              bool trans_b = false) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0)) {
    throw InputError("bmm expects matching 3-d tensors, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const size_t groups = a.dim(0);
  const size_t m = a.dim(1);
  const size_t k = a.dim(2);
  const size_t kb = trans_b ? b.dim(2) : b.dim(1);
  const size_t n = trans_b ? b.dim(1) : b.dim(2);
  if (k != kb) {
    throw InputError("bmm dimension mismatch: " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()) + (trans_b ? "^T" : ""));
  }
  Tensor<T> out = Tensor<T>::zeros({groups, m, n});
  parallel_for(groups, 8, [&](size_t g0, size_t g1) {
    for (size_t g = g0; g < g1; ++g) {
      detail::gemm_acc(a.data() + g * m * k, m, k, false, b.data() + g * b.dim(1) * b.dim(2),
                       b.dim(1), b.dim(2), trans_b, out.data() + g * m * n, false);
    }
  });
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto od = out.ptr();
    tape->record([ad, bd, od, trans_b, groups, m, n, k] {
      if (od->grad.empty()) return;
      const size_t bstride = bd->shape[1] * bd->shape[2];
      if (ad->requires_grad && ad->grad.empty()) ad->grad.assign(ad->values.size(), T(0));
      if (bd->requires_grad && bd->grad.empty()) bd->grad.assign(bd->values.size(), T(0));
      for (size_t g = 0; g < groups; ++g) {
        const T* gg = od->grad.data() + g * m * n;
        const T* bg = bd->values.data() + g * bstride;
        const T* ag = ad->values.data() + g * m * k;
        if (ad->requires_grad) {
          // dA = G * op(B)^T
          detail::gemm_acc(gg, m, n, false, bg, bd->shape[1], bd->shape[2], !trans_b,
                           ad->grad.data() + g * m * k, false);
        }
        if (bd->requires_grad) {
          if (!trans_b) {
            detail::gemm_acc(ag, m, k, true, gg, m, n, false, bd->grad.data() + g * bstride,
                             false);
          } else {
            detail::gemm_acc(gg, m, n, true, ag, m, k, false, bd->grad.data() + g * bstride,
                             false);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape = nullptr) {
  if (a.shape() != b.shape()) {
    throw InputError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto od = out.ptr();
    tape->record([ad, bd, od] {
      if (od->grad.empty()) return;
      if (ad->requires_grad) {
        if (ad->grad.empty()) ad->grad.assign(ad->values.size(), T(0));
        for (size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->values.size(), T(0));
        for (size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] += od->grad[i];
      }
    });
  }
  return out;
}

// x viewed as rows of length bias.size(); bias broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias, std::type_identity_t<Tape<T>*> tape = nullptr) {
  const size_t d = bias.size();
  if (bias.ndim() != 1 || d == 0 || x.size() % d != 0) {
    throw InputError("add_bias: bias " + shape_str(bias.shape()) + " does not divide " +
                     shape_str(x.shape()));
  }
  const size_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T* orow = out.data() + r * d;
    for (size_t j = 0; j < d; ++j) orow[j] = xr[j] + bias.data()[j];
  }
  if (tape && (x.requires_grad() || bias.requires_grad())) {
    out.set_requires_grad(true);
    auto xd = x.ptr();
    auto bd = bias.ptr();
    auto od = out.ptr();
    tape->record([xd, bd, od, rows, d] {
      if (od->grad.empty()) return;
      if (xd->requires_grad) {
        if (xd->grad.empty()) xd->grad.assign(xd->values.size(), T(0));
        for (size_t i = 0; i < od->grad.size(); ++i) xd->grad[i] += od->grad[i];
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(d, T(0));
        for (size_t r = 0; r < rows; ++r) {
          const T* g = od->grad.data() + r * d;
          for (size_t j = 0; j < d; ++j) bd->grad[j] += g[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, std::type_identity_t<Tape<T>*> tape = nullptr) {
  if (a.shape() != b.shape()) {
    throw InputError("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto od = out.ptr();
    tape->record([ad, bd, od] {
      if (od->grad.empty()) return;
      if (ad->requires_grad) {
        if (ad->grad.empty()) ad->grad.assign(ad->values.size(), T(0));
        for (size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i] * bd->values[i];
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->values.size(), T(0));
        for (size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] += od->grad[i] * ad->values[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, std::type_identity_t<T> c, std::type_identity_t<Tape<T>*> tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * c;
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto xd = x.ptr();
    auto od = out.ptr();
    tape->record([xd, od, c] {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), T(0));
      for (size_t i = 0; i < od->grad.size(); ++i) xd->grad[i] += od->grad[i] * c;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x, std::type_identity_t<Tape<T>*> tape = nullptr) {
  T acc = T(0);
  for (size_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto xd = x.ptr();
    auto od = out.ptr();
    tape->record([xd, od] {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), T(0));
      for (size_t i = 0; i < xd->grad.size(); ++i) xd->grad[i] += od->grad[0];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax along an axis, shift-stable (per-slice max subtracted).
// Backward per slice: dx = p * (g - <g, p>).
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, size_t axis, std::type_identity_t<Tape<T>*> tape = nullptr) {
  if (axis >= x.ndim()) {
    throw InputError("softmax axis " + std::to_string(axis) + " invalid for shape " +
                     shape_str(x.shape()));
  }
  if (!detail::all_finite(x.values())) {
    throw InputError("softmax input contains non-finite values");
  }
  const size_t n = x.dim(axis);
  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xv = x.data();
  T* ov = out.data();
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * n * inner + in;
      T mx = xv[base];
      for (size_t i = 1; i < n; ++i) mx = std::max(mx, xv[base + i * inner]);
      T sum = T(0);
      for (size_t i = 0; i < n; ++i) {
        const T e = std::exp(xv[base + i * inner] - mx);
        ov[base + i * inner] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (size_t i = 0; i < n; ++i) ov[base + i * inner] *= inv;
    }
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto xd = x.ptr();
    auto od = out.ptr();
    tape->record([xd, od, outer, inner, n] {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), T(0));
      const T* p = od->values.data();
      const T* g = od->grad.data();
      for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
          const size_t base = o * n * inner + in;
          T dot = T(0);
          for (size_t i = 0; i < n; ++i) dot += g[base + i * inner] * p[base + i * inner];
          for (size_t i = 0; i < n; ++i) {
            const size_t idx = base + i * inner;
            xd->grad[idx] += p[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last dimension with affine gain/bias.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     std::type_identity_t<T> eps, std::type_identity_t<Tape<T>*> tape = nullptr) {
  if (x.ndim() == 0 || gain.ndim() != 1 || bias.ndim() != 1) {
    throw InputError("layer_norm expects x plus 1-d gain/bias");
  }
  const size_t d = x.dim(x.ndim() - 1);
  if (gain.size() != d || bias.size() != d) {
    throw InputError("layer_norm gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match last dim of " +
                     shape_str(x.shape()));
  }
  if (!(eps > T(0))) throw InputError("layer_norm eps must be > 0");
  const size_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto stats = std::make_shared<std::vector<T>>(2 * rows);  // mean, inv_std per row
  for (size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T mean = T(0);
    for (size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = T(0);
    for (size_t j = 0; j < d; ++j) {
      const T c = xr[j] - mean;
      var += c * c;
    }
    var /= T(d);
    const T inv_std = T(1) / std::sqrt(var + eps);
    (*stats)[2 * r] = mean;
    (*stats)[2 * r + 1] = inv_std;
    T* orow = out.data() + r * d;
    for (size_t j = 0; j < d; ++j) {
      orow[j] = (xr[j] - mean) * inv_std * gain.data()[j] + bias.data()[j];
    }
  }
  if (tape && (x.requires_grad() || gain.requires_grad() || bias.requires_grad())) {
    out.set_requires_grad(true);
    auto xd = x.ptr();
    auto gd = gain.ptr();
    auto bd = bias.ptr();
    auto od = out.ptr();
    tape->record([xd, gd, bd, od, stats, rows, d] {
      if (od->grad.empty()) return;
      const T* g = od->grad.data();
      if (xd->requires_grad && xd->grad.empty()) xd->grad.assign(xd->values.size(), T(0));
      if (gd->requires_grad && gd->grad.empty()) gd->grad.assign(d, T(0));
      if (bd->requires_grad && bd->grad.empty()) bd->grad.assign(d, T(0));
      for (size_t r = 0; r < rows; ++r) {
        const T mean = (*stats)[2 * r];
        const T inv_std = (*stats)[2 * r + 1];
        const T* xr = xd->values.data() + r * d;
        const T* gr = g + r * d;
        if (gd->requires_grad || bd->requires_grad) {
          for (size_t j = 0; j < d; ++j) {
            const T xhat = (xr[j] - mean) * inv_std;
            if (gd->requires_grad) gd->grad[j] += gr[j] * xhat;
            if (bd->requires_grad) bd->grad[j] += gr[j];
          }
        }
        if (xd->requires_grad) {
          // dx = inv_std * (h - mean(h) - xhat * mean(h*xhat)), h = g*gain
          T mean_h = T(0), mean_hx = T(0);
          for (size_t j = 0; j < d; ++j) {
            const T h = gr[j] * gd->values[j];
            const T xhat = (xr[j] - mean) * inv_std;
            mean_h += h;
            mean_hx += h * xhat;
          }
          mean_h /= T(d);
          mean_hx /= T(d);
          T* dx = xd->grad.data() + r * d;
          for (size_t j = 0; j < d; ++j) {
            const T h = gr[j] * gd->values[j];
            const T xhat = (xr[j] - mean) * inv_std;
            dx[j] += inv_std * (h - mean_h - xhat * mean_hx);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
// ---------------------------------------------------------------------------
inline constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC1 = 0.044715;

template <typename T>
Tensor<T> gelu(const Tensor<T>& x, std::type_identity_t<Tape<T>*> tape = nullptr) {
  constexpr double c0 = kGeluC0;
  constexpr double c1 = kGeluC1;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (size_t i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    const T u = T(c0) * (v + T(c1) * v * v * v);
    out.data()[i] = T(0.5) * v * (T(1) + std::tanh(u));
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto xd = x.ptr();
    auto od = out.ptr();
    tape->record([xd, od] {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), T(0));
      for (size_t i = 0; i < xd->values.size(); ++i) {
        const T v = xd->values[i];
        const T u = T(kGeluC0) * (v + T(kGeluC1) * v * v * v);
        const T th = std::tanh(u);
        const T du = T(kGeluC0) * (T(1) + T(3) * T(kGeluC1) * v * v);
        const T dy = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
        xd->grad[i] += od->grad[i] * dy;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row gather with scatter-add backward. Also serves as embedding lookup.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& indices,
                      std::type_identity_t<Tape<T>*> tape = nullptr) {
  if (table.ndim() != 2) {
    throw InputError("gather_rows expects a 2-d table, got " + shape_str(table.shape()));
  }
  const size_t rows = table.dim(0);
  const size_t d = table.dim(1);
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<size_t>(indices[i]) >= rows) {
      throw InputError("row index " + std::to_string(indices[i]) + " out of range [0, " +
                       std::to_string(rows) + ") at position " + std::to_string(i));
    }
  }
  Tensor<T> out = Tensor<T>::zeros({indices.size(), d});
  for (size_t i = 0; i < indices.size(); ++i) {
    const T* src = table.data() + static_cast<size_t>(indices[i]) * d;
    std::copy(src, src + d, out.data() + i * d);
  }
  if (tape && table.requires_grad()) {
    out.set_requires_grad(true);
    auto td = table.ptr();
    auto od = out.ptr();
    auto idx = std::make_shared<std::vector<int>>(indices);
    tape->record([td, od, idx, d] {
      if (od->grad.empty()) return;
      if (td->grad.empty()) td->grad.assign(td->values.size(), T(0));
      for (size_t i = 0; i < idx->size(); ++i) {
        T* dst = td->grad.data() + static_cast<size_t>((*idx)[i]) * d;
        const T* g = od->grad.data() + i * d;
        for (size_t j = 0; j < d; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids,
                    std::type_identity_t<Tape<T>*> tape = nullptr) {
  return gather_rows(table, ids, tape);
}

// ---------------------------------------------------------------------------
// Mean cross-entropy from logits, computed via log-sum-exp. Rows whose
// target equals ignore_index contribute nothing to value or gradient.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        int ignore_index = -1, std::type_identity_t<Tape<T>*> tape = nullptr) {
  if (logits.ndim() != 2) {
    throw InputError("cross_entropy expects 2-d logits, got " + shape_str(logits.shape()));
  }
  const size_t n = logits.dim(0);
  const size_t c = logits.dim(1);
  if (targets.size() != n) {
    throw InputError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  }
  size_t kept = 0;
  for (size_t i = 0; i < n; ++i) {
    if (targets[i] == ignore_index) continue;
    if (targets[i] < 0 || static_cast<size_t>(targets[i]) >= c) {
      throw InputError("cross_entropy target " + std::to_string(targets[i]) +
                       " out of range [0, " + std::to_string(c) + ") at row " +
                       std::to_string(i));
    }
    ++kept;
  }
  if (kept == 0) throw InputError("cross_entropy: all rows ignored, loss undefined");

  T total = T(0);
  for (size_t i = 0; i < n; ++i) {
    if (targets[i] == ignore_index) continue;
    const T* row = logits.data() + i * c;
    T mx = row[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    total += mx + std::log(sum) - row[static_cast<size_t>(targets[i])];
  }
  Tensor<T> out = Tensor<T>::scalar(total / T(kept));
  if (tape && logits.requires_grad()) {
    out.set_requires_grad(true);
    auto ld = logits.ptr();
    auto od = out.ptr();
    auto tg = std::make_shared<std::vector<int>>(targets);
    tape->record([ld, od, tg, n, c, kept, ignore_index] {
      if (od->grad.empty()) return;
      const T g = od->grad[0] / T(kept);
      if (ld->grad.empty()) ld->grad.assign(ld->values.size(), T(0));
      for (size_t i = 0; i < n; ++i) {
        if ((*tg)[i] == ignore_index) continue;
        const T* row = ld->values.data() + i * c;
        T* dst = ld->grad.data() + i * c;
        T mx = row[0];
        for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
        const T inv = T(1) / sum;
        for (size_t j = 0; j < c; ++j) {
          const T p = std::exp(row[j] - mx) * inv;
          dst[j] += g * (p - (static_cast<size_t>((*tg)[i]) == j ? T(1) : T(0)));
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inverted dropout with an explicit generator; backward reuses the mask.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, std::type_identity_t<Tape<T>*> tape = nullptr) {
  if (p < 0.0 || p >= 1.0) throw InputError("dropout rate must be in [0, 1)");
  if (p == 0.0) return x;
  auto mask = std::make_shared<std::vector<T>>(x.size());
  const T keep_scale = T(1.0 / (1.0 - p));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (size_t i = 0; i < x.size(); ++i) {
    const T m = rng.next_double() >= p ? keep_scale : T(0);
    (*mask)[i] = m;
    out.data()[i] = x.data()[i] * m;
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto xd = x.ptr();
    auto od = out.ptr();
    tape->record([xd, od, mask] {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), T(0));
      for (size_t i = 0; i < xd->grad.size(); ++i) xd->grad[i] += od->grad[i] * (*mask)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<size_t> new_shape, std::type_identity_t<Tape<T>*> tape = nullptr) {
  if (numel(new_shape) != x.size()) {
    throw InputError("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                     " changes element count");
  }
  Tensor<T> out = Tensor<T>::from(std::move(new_shape), x.values());
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto xd = x.ptr();
    auto od = out.ptr();
    tape->record([xd, od] {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), T(0));
      for (size_t i = 0; i < xd->grad.size(); ++i) xd->grad[i] += od->grad[i];
    });
  }
  return out;
}

// [B*L, H*dk] -> [B*H, L, dk]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, size_t batch, size_t len, size_t heads,
                      std::type_identity_t<Tape<T>*> tape = nullptr) {
  if (x.ndim() != 2 || x.dim(0) != batch * len || x.dim(1) % heads != 0) {
    throw InputError("split_heads: shape " + shape_str(x.shape()) + " incompatible with B=" +
                     std::to_string(batch) + " L=" + std::to_string(len) + " H=" +
                     std::to_string(heads));
  }
  const size_t d = x.dim(1);
  const size_t dk = d / heads;
  Tensor<T> out = Tensor<T>::zeros({batch * heads, len, dk});
  for (size_t b = 0; b < batch; ++b) {
    for (size_t l = 0; l < len; ++l) {
      const T* src = x.data() + (b * len + l) * d;
      for (size_t h = 0; h < heads; ++h) {
        std::copy(src + h * dk, src + (h + 1) * dk,
                  out.data() + ((b * heads + h) * len + l) * dk);
      }
    }
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto xd = x.ptr();
    auto od = out.ptr();
    tape->record([xd, od, batch, len, heads, d, dk] {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), T(0));
      for (size_t b = 0; b < batch; ++b) {
        for (size_t l = 0; l < len; ++l) {
          T* dst = xd->grad.data() + (b * len + l) * d;
          for (size_t h = 0; h < heads; ++h) {
            const T* g = od->grad.data() + ((b * heads + h) * len + l) * dk;
            for (size_t j = 0; j < dk; ++j) dst[h * dk + j] += g[j];
          }
        }
      }
    });
  }
  return out;
}

// [B*H, L, dk] -> [B*L, H*dk]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, size_t batch, size_t heads, size_t len,
                      std::type_identity_t<Tape<T>*> tape = nullptr) {
  if (x.ndim() != 3 || x.dim(0) != batch * heads || x.dim(1) != len) {
    throw InputError("merge_heads: shape " + shape_str(x.shape()) + " incompatible with B=" +
                     std::to_string(batch) + " H=" + std::to_string(heads) + " L=" +
                     std::to_string(len));
  }
  const size_t dk = x.dim(2);
  const size_t d = heads * dk;
  Tensor<T> out = Tensor<T>::zeros({batch * len, d});
  for (size_t b = 0; b < batch; ++b) {
    for (size_t h = 0; h < heads; ++h) {
      for (size_t l = 0; l < len; ++l) {
        const T* src = x.data() + ((b * heads + h) * len + l) * dk;
        std::copy(src, src + dk, out.data() + (b * len + l) * d + h * dk);
      }
    }
  }
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto xd = x.ptr();
    auto od = out.ptr();
    tape->record([xd, od, batch, heads, len, dk, d] {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), T(0));
      for (size_t b = 0; b < batch; ++b) {
        for (size_t h = 0; h < heads; ++h) {
          for (size_t l = 0; l < len; ++l) {
            T* dst = xd->grad.data() + ((b * heads + h) * len + l) * dk;
            const T* g = od->grad.data() + (b * len + l) * d + h * dk;
            for (size_t j = 0; j < dk; ++j) dst[j] += g[j];
          }
        }
      }
    });
  }
  return out;
}

// scores: [B*H, L, L]; column_bias: B*L values added to every row of the
// matching batch element (0 at real tokens, kMaskBias at PAD columns).
template <typename T>
Tensor<T> add_attention_mask(const Tensor<T>& scores, const std::vector<T>& column_bias,
                             size_t batch, size_t heads, std::type_identity_t<Tape<T>*> tape = nullptr) {
  if (scores.ndim() != 3 || scores.dim(0) != batch * heads) {
    throw InputError("add_attention_mask: scores " + shape_str(scores.shape()) +
                     " incompatible with B=" + std::to_string(batch) + " H=" +
                     std::to_string(heads));
  }
  const size_t len = scores.dim(1);
  if (scores.dim(2) != len || column_bias.size() != batch * len) {
    throw InputError("add_attention_mask: bias length " + std::to_string(column_bias.size()) +
                     " does not match scores " + shape_str(scores.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(scores.shape());
  for (size_t g = 0; g < batch * heads; ++g) {
    const size_t b = g / heads;
    for (size_t i = 0; i < len; ++i) {
      const T* src = scores.data() + (g * len + i) * len;
      T* dst = out.data() + (g * len + i) * len;
      const T* bias = column_bias.data() + b * len;
      for (size_t j = 0; j < len; ++j) dst[j] = src[j] + bias[j];
    }
  }
  if (tape && scores.requires_grad()) {
    out.set_requires_grad(true);
    auto sd = scores.ptr();
    auto od = out.ptr();
    tape->record([sd, od] {
      if (od->grad.empty()) return;
      if (sd->grad.empty()) sd->grad.assign(sd->values.size(), T(0));
      for (size_t i = 0; i < sd->grad.size(); ++i) sd->grad[i] += od->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scaled dot-product attention for one sequence: Q, K, V are [H, L, dk],
// key_mask[l] == 0 marks PAD columns. softmax(Q K^T / sqrt(dk) + bias) V.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const std::vector<int>& key_mask, std::type_identity_t<Tape<T>*> tape = nullptr) {
  if (q.ndim() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw InputError("attention expects equal [H,L,dk] tensors, got " + shape_str(q.shape()) +
                     ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const size_t len = q.dim(1);
  const size_t dk = q.dim(2);
  if (key_mask.size() != len) {
    throw InputError("attention mask length " + std::to_string(key_mask.size()) +
                     " does not match L=" + std::to_string(len));
  }
  Tensor<T> scores = bmm(q, k, tape, /*trans_b=*/true);
  scores = scale(scores, T(1.0 / std::sqrt(double(dk))), tape);
  std::vector<T> bias(len);
  for (size_t j = 0; j < len; ++j) bias[j] = key_mask[j] ? T(0) : T(kMaskBias);
  scores = add_attention_mask(scores, bias, 1, q.dim(0), tape);
  Tensor<T> probs = softmax(scores, 2, tape);
  return bmm(probs, v, tape);
}

}  // namespace sciedkit
