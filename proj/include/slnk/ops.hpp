#pragma once

// Differentiable primitives. Every op computes its forward value, then (when
// the graph is recording and an input carries gradient) registers one tape
// node whose lambda accumulates input gradients from the output gradient.
//
// All loops are plain single-threaded C++ with a fixed iteration order, so
// results and gradients are bitwise reproducible.

#include <cstring>
#include <functional>

#include "slnk/graph.hpp"

namespace slnk {
namespace ops {

// Multiplies executed by forward ops (weight-bearing products only: matmul,
// dense, conv, attention matmuls). Norms, softmax, activations and scalar
// scaling do not count, matching the convention behind the paper-style
// "Multiplies" columns.
inline thread_local int64_t multiply_count = 0;

inline void reset_multiply_count() { multiply_count = 0; }

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
bool want_grad(const Graph<T>& g, std::initializer_list<const Tensor<T>*> ins) {
  if (!g.recording()) return false;
  for (const Tensor<T>* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: [m,k] x [k,n] -> [m,n].  dA = dC.B^T, dB = A^T.dC
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError(concat("matmul shape mismatch: ", shape_str(a.shape()),
                            " x ", shape_str(b.shape())));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out = Tensor<T>::zeros({m, n});
  detail::gemm_acc(a.data(), b.data(), out.data(), m, k, n);
  multiply_count += m * k * n;
  SLNK_DEBUG_CHECK_FINITE(out, "matmul");

  if (detail::want_grad(g, {&a, &b})) {
    out.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    g.record(out, {as, bs}, [as, bs, os, m, k, n] {
      const T* dc = os->grad.data();
      if (as->requires_grad) {
        if (as->grad.empty()) as->grad.assign(as->value.size(), T(0));
        detail::gemm_nt_acc(dc, bs->value.data(), as->grad.data(), m, n, k);
      }
      if (bs->requires_grad) {
        if (bs->grad.empty()) bs->grad.assign(bs->value.size(), T(0));
        detail::gemm_tn_acc(as->value.data(), dc, bs->grad.data(), k, m, n);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// affine: y[N,Dout] = x[N,Din] . W[Dout,Din]^T + b
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> affine(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1))
    throw ShapeError(concat("dense shape mismatch: x", shape_str(x.shape()),
                            " w", shape_str(w.shape())));
  if (b.size() != w.dim(0))
    throw ShapeError(concat("dense bias extent ", b.size(), " != ", w.dim(0)));
  const int64_t n = x.dim(0), din = x.dim(1), dout = w.dim(0);
  Tensor<T> out = Tensor<T>::zeros({n, dout});
  for (int64_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * dout, b.data(), sizeof(T) * dout);
  detail::gemm_nt_acc(x.data(), w.data(), out.data(), n, din, dout);
  multiply_count += n * din * dout;
  SLNK_DEBUG_CHECK_FINITE(out, "dense");

  if (detail::want_grad(g, {&x, &w, &b})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), ws = w.storage(), bs = b.storage(), os = out.storage();
    g.record(out, {xs, ws, bs}, [xs, ws, bs, os, n, din, dout] {
      const T* dy = os->grad.data();
      if (xs->requires_grad) {
        if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
        detail::gemm_acc(dy, ws->value.data(), xs->grad.data(), n, dout, din);
      }
      if (ws->requires_grad) {
        if (ws->grad.empty()) ws->grad.assign(ws->value.size(), T(0));
        detail::gemm_tn_acc(dy, xs->value.data(), ws->grad.data(), dout, n, din);
      }
      if (bs->requires_grad) {
        if (bs->grad.empty()) bs->grad.assign(bs->value.size(), T(0));
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < dout; ++j) bs->grad[j] += dy[i * dout + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d, valid padding, NCHW.  H' = floor((H-kh)/sh)+1.
// im2col per sample, then one GEMM against W viewed as [Cout, Cin*kh*kw].
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& bias, int64_t sh, int64_t sw) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ShapeError(concat("conv2d expects NCHW input and OIHW weights, got ",
                            shape_str(x.shape()), " and ", shape_str(w.shape())));
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin)
    throw ShapeError(concat("conv2d channel mismatch: input has ", cin,
                            ", kernel expects ", w.dim(1)));
  if (sh < 1 || sw < 1) throw ConfigError("conv2d strides must be >= 1");
  if (kh > h || kw > wd)
    throw ConfigError(concat("conv2d kernel ", kh, "x", kw,
                             " larger than input ", h, "x", wd));
  if (bias.size() != cout)
    throw ShapeError(concat("conv2d bias extent ", bias.size(), " != ", cout));

  const int64_t oh = (h - kh) / sh + 1;
  const int64_t ow = (wd - kw) / sw + 1;
  const int64_t patch = cin * kh * kw;
  Tensor<T> out = Tensor<T>::zeros({n, cout, oh, ow});

  std::vector<T> col(static_cast<size_t>(patch * oh * ow));
  auto im2col = [&](const T* xs) {
    T* cp = col.data();
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t ki = 0; ki < kh; ++ki)
        for (int64_t kj = 0; kj < kw; ++kj) {
          const T* base = xs + ci * h * wd;
          for (int64_t i = 0; i < oh; ++i) {
            const T* r = base + (i * sh + ki) * wd + kj;
            for (int64_t j = 0; j < ow; ++j) *cp++ = r[j * sw];
          }
        }
  };

  for (int64_t b = 0; b < n; ++b) {
    im2col(x.data() + b * cin * h * wd);
    T* op = out.data() + b * cout * oh * ow;
    for (int64_t co = 0; co < cout; ++co) {
      T bv = bias.data()[co];
      for (int64_t s = 0; s < oh * ow; ++s) op[co * oh * ow + s] = bv;
    }
    // out[co, s] += W[co, p] * col[p, s]
    detail::gemm_acc(w.data(), col.data(), op, cout, patch, oh * ow);
  }
  multiply_count += n * cout * patch * oh * ow;
  SLNK_DEBUG_CHECK_FINITE(out, "conv2d");

  if (detail::want_grad(g, {&x, &w, &bias})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), ws = w.storage(), bs = bias.storage(), os = out.storage();
    g.record(out, {xs, ws, bs},
             [xs, ws, bs, os, n, cin, h, wd, cout, kh, kw, sh, sw, oh, ow, patch] {
      const T* dy = os->grad.data();
      std::vector<T> col(static_cast<size_t>(patch * oh * ow));
      std::vector<T> dcol(static_cast<size_t>(patch * oh * ow));
      const bool need_dx = xs->requires_grad;
      const bool need_dw = ws->requires_grad;
      const bool need_db = bs->requires_grad;
      if (need_dx && xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      if (need_dw && ws->grad.empty()) ws->grad.assign(ws->value.size(), T(0));
      if (need_db && bs->grad.empty()) bs->grad.assign(bs->value.size(), T(0));

      for (int64_t b = 0; b < n; ++b) {
        const T* dyb = dy + b * cout * oh * ow;
        if (need_dw) {
          // rebuild col for this sample
          T* cp = col.data();
          const T* xb = xs->value.data() + b * cin * h * wd;
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ki = 0; ki < kh; ++ki)
              for (int64_t kj = 0; kj < kw; ++kj) {
                const T* base = xb + ci * h * wd;
                for (int64_t i = 0; i < oh; ++i) {
                  const T* r = base + (i * sh + ki) * wd + kj;
                  for (int64_t j = 0; j < ow; ++j) *cp++ = r[j * sw];
                }
              }
          // dW[co,p] += dy[co,s] * col[p,s]
          detail::gemm_nt_acc(dyb, col.data(), ws->grad.data(), cout, oh * ow, patch);
        }
        if (need_db) {
          for (int64_t co = 0; co < cout; ++co) {
            T acc = T(0);
            for (int64_t s = 0; s < oh * ow; ++s) acc += dyb[co * oh * ow + s];
            bs->grad[co] += acc;
          }
        }
        if (need_dx) {
          // dcol[p,s] = W[co,p]^T dy[co,s], then scatter back (col2im)
          std::fill(dcol.begin(), dcol.end(), T(0));
          detail::gemm_tn_acc(ws->value.data(), dyb, dcol.data(), patch, cout, oh * ow);
          T* dxb = xs->grad.data() + b * cin * h * wd;
          const T* cp = dcol.data();
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ki = 0; ki < kh; ++ki)
              for (int64_t kj = 0; kj < kw; ++kj) {
                T* base = dxb + ci * h * wd;
                for (int64_t i = 0; i < oh; ++i) {
                  T* r = base + (i * sh + ki) * wd + kj;
                  for (int64_t j = 0; j < ow; ++j) r[j * sw] += *cp++;
                }
              }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Non-overlapping max pooling; remainder rows/cols truncated. Gradient goes
// to the argmax; ties resolve to the lowest flat index.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> max_pool2d(Graph<T>& g, const Tensor<T>& x, int64_t ph, int64_t pw) {
  if (ph < 1 || pw < 1) throw ConfigError("pool extents must be >= 1");
  if (x.ndim() != 4)
    throw ShapeError(concat("max_pool2d expects NCHW, got ", shape_str(x.shape())));
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t oh = h / ph, ow = wd / pw;
  if (oh < 1 || ow < 1)
    throw ShapeError(concat("pool ", ph, "x", pw, " collapses input ", h, "x", wd));
  Tensor<T> out = Tensor<T>::zeros({n, c, oh, ow});
  std::vector<int64_t> argmax(static_cast<size_t>(out.size()));

  const T* xp = x.data();
  T* op = out.data();
  int64_t oidx = 0;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const int64_t plane = (b * c + ch) * h * wd;
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          int64_t best = plane + (i * ph) * wd + j * pw;
          T bv = xp[best];
          for (int64_t di = 0; di < ph; ++di)
            for (int64_t dj = 0; dj < pw; ++dj) {
              int64_t idx = plane + (i * ph + di) * wd + (j * pw + dj);
              if (xp[idx] > bv) { bv = xp[idx]; best = idx; }
            }
          op[oidx] = bv;
          argmax[static_cast<size_t>(oidx)] = best;
          ++oidx;
        }
    }

  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os, argmax = std::move(argmax)] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (size_t i = 0; i < argmax.size(); ++i)
        xs->grad[static_cast<size_t>(argmax[i])] += os->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------
enum class Act { Relu, Gelu, SoftmaxLastAxis, LogSoftmaxLastAxis };

template <typename T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int64_t i = 0; i < x.size(); ++i)
    out.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (size_t i = 0; i < xs->value.size(); ++i)
        if (xs->value[i] > T(0)) xs->grad[i] += os->grad[i];
    });
  }
  return out;
}

// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(Graph<T>& g, const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    double v = static_cast<double>(x.data()[i]);
    out.data()[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (size_t i = 0; i < xs->value.size(); ++i) {
        double v = static_cast<double>(xs->value[i]);
        double d = 0.5 * (1.0 + std::erf(v * kInvSqrt2)) +
                   v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
        xs->grad[i] += static_cast<T>(d) * os->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_last(Graph<T>& g, const Tensor<T>& x) {
  if (x.ndim() < 1 || x.dim(x.ndim() - 1) < 1)
    throw ShapeError("softmax needs a non-empty last axis");
  const int64_t d = x.dim(x.ndim() - 1);
  const int64_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T* yr = out.data() + r * d;
    T m = xr[0];
    for (int64_t j = 1; j < d; ++j) m = std::max(m, xr[j]);
    T z = T(0);
    for (int64_t j = 0; j < d; ++j) { yr[j] = std::exp(xr[j] - m); z += yr[j]; }
    for (int64_t j = 0; j < d; ++j) yr[j] /= z;
  }
  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os, rows, d] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (int64_t r = 0; r < rows; ++r) {
        const T* y = os->value.data() + r * d;
        const T* dy = os->grad.data() + r * d;
        T dot = T(0);
        for (int64_t j = 0; j < d; ++j) dot += dy[j] * y[j];
        for (int64_t j = 0; j < d; ++j)
          xs->grad[r * d + j] += y[j] * (dy[j] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> log_softmax_last(Graph<T>& g, const Tensor<T>& x) {
  if (x.ndim() < 1 || x.dim(x.ndim() - 1) < 1)
    throw ShapeError("log-softmax needs a non-empty last axis");
  const int64_t d = x.dim(x.ndim() - 1);
  const int64_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T* yr = out.data() + r * d;
    T m = xr[0];
    for (int64_t j = 1; j < d; ++j) m = std::max(m, xr[j]);
    T z = T(0);
    for (int64_t j = 0; j < d; ++j) z += std::exp(xr[j] - m);
    T lse = m + std::log(z);
    for (int64_t j = 0; j < d; ++j) yr[j] = xr[j] - lse;
  }
  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os, rows, d] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (int64_t r = 0; r < rows; ++r) {
        const T* y = os->value.data() + r * d;
        const T* dy = os->grad.data() + r * d;
        T s = T(0);
        for (int64_t j = 0; j < d; ++j) s += dy[j];
        for (int64_t j = 0; j < d; ++j)
          xs->grad[r * d + j] += dy[j] - std::exp(y[j]) * s;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> activation(Graph<T>& g, const Tensor<T>& x, Act kind) {
  switch (kind) {
    case Act::Relu: return relu(g, x);
    case Act::Gelu: return gelu(g, x);
    case Act::SoftmaxLastAxis: return softmax_last(g, x);
    case Act::LogSoftmaxLastAxis: return log_softmax_last(g, x);
  }
  throw ContractError("unknown activation kind");
}

// ---------------------------------------------------------------------------
// Batch normalization over (N,H,W) per channel, NCHW. Training mode uses
// batch statistics (biased variance) and updates the running buffers by
// EMA: run = (1-momentum)*run + momentum*batch. Eval mode reads the running
// buffers. running_mean/var are plain state, never differentiated.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> batch_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, bool train, T eps, T momentum) {
  if (x.ndim() != 4)
    throw ShapeError(concat("batch_norm expects NCHW, got ", shape_str(x.shape())));
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (gamma.size() != c || beta.size() != c || running_mean.size() != c ||
      running_var.size() != c)
    throw ShapeError(concat("batch_norm parameter extents do not match ", c,
                            " channels"));
  const int64_t m = n * h * wd;
  const int64_t plane = h * wd;
  Tensor<T> out = Tensor<T>::zeros(x.shape());

  std::vector<T> mean(static_cast<size_t>(c)), var(static_cast<size_t>(c));
  if (train) {
    for (int64_t ch = 0; ch < c; ++ch) {
      T acc = T(0);
      for (int64_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * plane;
        for (int64_t s = 0; s < plane; ++s) acc += p[s];
      }
      mean[ch] = acc / static_cast<T>(m);
      T vacc = T(0);
      for (int64_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * plane;
        for (int64_t s = 0; s < plane; ++s) {
          T d = p[s] - mean[ch];
          vacc += d * d;
        }
      }
      var[ch] = vacc / static_cast<T>(m);
      running_mean.data()[ch] =
          (T(1) - momentum) * running_mean.data()[ch] + momentum * mean[ch];
      running_var.data()[ch] =
          (T(1) - momentum) * running_var.data()[ch] + momentum * var[ch];
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean.data()[ch];
      var[ch] = running_var.data()[ch];
    }
  }

  std::vector<T> inv_std(static_cast<size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch)
    inv_std[ch] = T(1) / std::sqrt(var[ch] + eps);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* p = x.data() + (b * c + ch) * plane;
      T* o = out.data() + (b * c + ch) * plane;
      T gmul = gamma.data()[ch] * inv_std[ch];
      T badd = beta.data()[ch] - mean[ch] * gmul;
      for (int64_t s = 0; s < plane; ++s) o[s] = p[s] * gmul + badd;
    }
  SLNK_DEBUG_CHECK_FINITE(out, "batch_norm");

  if (detail::want_grad(g, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), gs = gamma.storage(), bs = beta.storage(),
         os = out.storage();
    g.record(out, {xs, gs, bs},
             [xs, gs, bs, os, n, c, plane, m, train,
              mean = std::move(mean), inv_std = std::move(inv_std)] {
      const T* dy = os->grad.data();
      if (gs->requires_grad && gs->grad.empty()) gs->grad.assign(gs->value.size(), T(0));
      if (bs->requires_grad && bs->grad.empty()) bs->grad.assign(bs->value.size(), T(0));
      if (xs->requires_grad && xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (int64_t ch = 0; ch < c; ++ch) {
        // per-channel reductions over (N,H,W)
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int64_t b = 0; b < n; ++b) {
          const T* xp = xs->value.data() + (b * c + ch) * plane;
          const T* dp = dy + (b * c + ch) * plane;
          for (int64_t s = 0; s < plane; ++s) {
            T xhat = (xp[s] - mean[ch]) * inv_std[ch];
            sum_dy += dp[s];
            sum_dy_xhat += dp[s] * xhat;
          }
        }
        if (gs->requires_grad) gs->grad[ch] += sum_dy_xhat;
        if (bs->requires_grad) bs->grad[ch] += sum_dy;
        if (!xs->requires_grad) continue;
        T gmul = gs->value[ch] * inv_std[ch];
        if (train) {
          T mean_dy = sum_dy / static_cast<T>(m);
          T mean_dy_xhat = sum_dy_xhat / static_cast<T>(m);
          for (int64_t b = 0; b < n; ++b) {
            const T* xp = xs->value.data() + (b * c + ch) * plane;
            const T* dp = dy + (b * c + ch) * plane;
            T* dx = xs->grad.data() + (b * c + ch) * plane;
            for (int64_t s = 0; s < plane; ++s) {
              T xhat = (xp[s] - mean[ch]) * inv_std[ch];
              dx[s] += gmul * (dp[s] - mean_dy - xhat * mean_dy_xhat);
            }
          }
        } else {
          for (int64_t b = 0; b < n; ++b) {
            const T* dp = dy + (b * c + ch) * plane;
            T* dx = xs->grad.data() + (b * c + ch) * plane;
            for (int64_t s = 0; s < plane; ++s) dx[s] += gmul * dp[s];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> layer_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  const int64_t d = x.dim(x.ndim() - 1);
  if (gamma.size() != d || beta.size() != d)
    throw ShapeError(concat("layer_norm parameter extents do not match last axis ", d));
  const int64_t rows = x.size() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> mean(static_cast<size_t>(rows)), inv_std(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T mu = T(0);
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T v = T(0);
    for (int64_t j = 0; j < d; ++j) { T dd = xr[j] - mu; v += dd * dd; }
    v /= static_cast<T>(d);
    mean[r] = mu;
    inv_std[r] = T(1) / std::sqrt(v + eps);
    T* yr = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j)
      yr[j] = (xr[j] - mu) * inv_std[r] * gamma.data()[j] + beta.data()[j];
  }
  SLNK_DEBUG_CHECK_FINITE(out, "layer_norm");

  if (detail::want_grad(g, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), gs = gamma.storage(), bs = beta.storage(),
         os = out.storage();
    g.record(out, {xs, gs, bs},
             [xs, gs, bs, os, rows, d, mean = std::move(mean),
              inv_std = std::move(inv_std)] {
      const T* dy = os->grad.data();
      if (gs->requires_grad && gs->grad.empty()) gs->grad.assign(gs->value.size(), T(0));
      if (bs->requires_grad && bs->grad.empty()) bs->grad.assign(bs->value.size(), T(0));
      if (xs->requires_grad && xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (int64_t r = 0; r < rows; ++r) {
        const T* xr = xs->value.data() + r * d;
        const T* dr = dy + r * d;
        T sum_dg = T(0), sum_dg_xhat = T(0);
        for (int64_t j = 0; j < d; ++j) {
          T xhat = (xr[j] - mean[r]) * inv_std[r];
          T dxhat = dr[j] * gs->value[j];
          sum_dg += dxhat;
          sum_dg_xhat += dxhat * xhat;
          if (gs->requires_grad) gs->grad[j] += dr[j] * xhat;
          if (bs->requires_grad) bs->grad[j] += dr[j];
        }
        if (!xs->requires_grad) continue;
        T* dx = xs->grad.data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
          T xhat = (xr[j] - mean[r]) * inv_std[r];
          T dxhat = dr[j] * gs->value[j];
          dx[j] += inv_std[r] * (dxhat - sum_dg / static_cast<T>(d) -
                                 xhat * sum_dg_xhat / static_cast<T>(d));
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mean cross entropy from logits; backward is (softmax - onehot)/N.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> cross_entropy(Graph<T>& g, const Tensor<T>& logits,
                        const std::vector<int64_t>& labels) {
  if (logits.ndim() != 2)
    throw ShapeError(concat("cross_entropy expects [N,K] logits, got ",
                            shape_str(logits.shape())));
  const int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError(concat("cross_entropy got ", labels.size(), " labels for ",
                            n, " rows"));
  std::vector<T> probs(static_cast<size_t>(n * k));
  T loss = T(0);
  for (int64_t r = 0; r < n; ++r) {
    int64_t lbl = labels[static_cast<size_t>(r)];
    if (lbl < 0 || lbl >= k)
      throw ContractError(concat("label ", lbl, " out of range [0,", k, ")"));
    const T* xr = logits.data() + r * k;
    T m = xr[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, xr[j]);
    T z = T(0);
    for (int64_t j = 0; j < k; ++j) {
      probs[static_cast<size_t>(r * k + j)] = std::exp(xr[j] - m);
      z += probs[static_cast<size_t>(r * k + j)];
    }
    for (int64_t j = 0; j < k; ++j) probs[static_cast<size_t>(r * k + j)] /= z;
    loss -= (xr[lbl] - m - std::log(z));
  }
  loss /= static_cast<T>(n);
  Tensor<T> out = Tensor<T>::scalar(loss);

  if (detail::want_grad(g, {&logits})) {
    out.set_requires_grad(true);
    auto ls = logits.storage(), os = out.storage();
    g.record(out, {ls}, [ls, os, labels, probs = std::move(probs), n, k] {
      if (!ls->requires_grad) return;
      if (ls->grad.empty()) ls->grad.assign(ls->value.size(), T(0));
      T d = os->grad[0] / static_cast<T>(n);
      for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < k; ++j) {
          T p = probs[static_cast<size_t>(r * k + j)];
          T onehot = (j == labels[static_cast<size_t>(r)]) ? T(1) : T(0);
          ls->grad[static_cast<size_t>(r * k + j)] += d * (p - onehot);
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(concat("add shape mismatch: ", shape_str(a.shape()), " vs ",
                            shape_str(b.shape())));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int64_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  if (detail::want_grad(g, {&a, &b})) {
    out.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    g.record(out, {as, bs}, [as, bs, os] {
      for (auto* s : {as.get(), bs.get()}) {
        if (!s->requires_grad) continue;
        if (s->grad.empty()) s->grad.assign(s->value.size(), T(0));
        for (size_t i = 0; i < s->grad.size(); ++i) s->grad[i] += os->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(concat("mul shape mismatch: ", shape_str(a.shape()), " vs ",
                            shape_str(b.shape())));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int64_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::want_grad(g, {&a, &b})) {
    out.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    g.record(out, {as, bs}, [as, bs, os] {
      if (as->requires_grad) {
        if (as->grad.empty()) as->grad.assign(as->value.size(), T(0));
        for (size_t i = 0; i < as->grad.size(); ++i)
          as->grad[i] += bs->value[i] * os->grad[i];
      }
      if (bs->requires_grad) {
        if (bs->grad.empty()) bs->grad.assign(bs->value.size(), T(0));
        for (size_t i = 0; i < bs->grad.size(); ++i)
          bs->grad[i] += as->value[i] * os->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& x, T c) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * c;
  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os, c] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (size_t i = 0; i < xs->grad.size(); ++i) xs->grad[i] += c * os->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(Graph<T>& g, const Tensor<T>& x) {
  T acc = T(0);
  for (int64_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (size_t i = 0; i < xs->grad.size(); ++i) xs->grad[i] += os->grad[0];
    });
  }
  return out;
}

// Copying reshape; backward restores the original layout.
template <typename T>
Tensor<T> reshape(Graph<T>& g, const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError(concat("cannot reshape ", shape_str(x.shape()), " to ",
                            shape_str(shape)));
  Tensor<T> out = Tensor<T>::from(std::move(shape), x.values());
  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (size_t i = 0; i < xs->grad.size(); ++i) xs->grad[i] += os->grad[i];
    });
  }
  return out;
}

// [N,A,B,C] -> [N,B,A,C]; self-inverse.
template <typename T>
Tensor<T> swap_axes_12(Graph<T>& g, const Tensor<T>& x) {
  if (x.ndim() != 4)
    throw ShapeError(concat("swap_axes_12 expects rank 4, got ", shape_str(x.shape())));
  const int64_t n = x.dim(0), a = x.dim(1), b = x.dim(2), c = x.dim(3);
  Tensor<T> out = Tensor<T>::zeros({n, b, a, c});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < a; ++j)
      for (int64_t p = 0; p < b; ++p)
        std::memcpy(out.data() + ((i * b + p) * a + j) * c,
                    x.data() + ((i * a + j) * b + p) * c, sizeof(T) * c);
  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os, n, a, b, c] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < a; ++j)
          for (int64_t p = 0; p < b; ++p) {
            const T* src = os->grad.data() + ((i * b + p) * a + j) * c;
            T* dst = xs->grad.data() + ((i * a + j) * b + p) * c;
            for (int64_t q = 0; q < c; ++q) dst[q] += src[q];
          }
    });
  }
  return out;
}

// Batched A[B,T,K] x B[B,S,K]^T -> [B,T,S]
template <typename T>
Tensor<T> bmm_nt(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
    throw ShapeError(concat("bmm_nt shape mismatch: ", shape_str(a.shape()),
                            " x ", shape_str(b.shape())));
  const int64_t bt = a.dim(0), t = a.dim(1), k = a.dim(2), s = b.dim(1);
  Tensor<T> out = Tensor<T>::zeros({bt, t, s});
  for (int64_t i = 0; i < bt; ++i)
    detail::gemm_nt_acc(a.data() + i * t * k, b.data() + i * s * k,
                        out.data() + i * t * s, t, k, s);
  multiply_count += bt * t * k * s;
  if (detail::want_grad(g, {&a, &b})) {
    out.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    g.record(out, {as, bs}, [as, bs, os, bt, t, k, s] {
      if (as->requires_grad) {
        if (as->grad.empty()) as->grad.assign(as->value.size(), T(0));
        for (int64_t i = 0; i < bt; ++i)  // dA = dC.B
          detail::gemm_acc(os->grad.data() + i * t * s, bs->value.data() + i * s * k,
                           as->grad.data() + i * t * k, t, s, k);
      }
      if (bs->requires_grad) {
        if (bs->grad.empty()) bs->grad.assign(bs->value.size(), T(0));
        for (int64_t i = 0; i < bt; ++i)  // dB = dC^T.A
          detail::gemm_tn_acc(os->grad.data() + i * t * s, as->value.data() + i * t * k,
                              bs->grad.data() + i * s * k, s, t, k);
      }
    });
  }
  return out;
}

// Batched A[B,T,S] x B[B,S,K] -> [B,T,K]
template <typename T>
Tensor<T> bmm_nn(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ShapeError(concat("bmm_nn shape mismatch: ", shape_str(a.shape()),
                            " x ", shape_str(b.shape())));
  const int64_t bt = a.dim(0), t = a.dim(1), s = a.dim(2), k = b.dim(2);
  Tensor<T> out = Tensor<T>::zeros({bt, t, k});
  for (int64_t i = 0; i < bt; ++i)
    detail::gemm_acc(a.data() + i * t * s, b.data() + i * s * k,
                     out.data() + i * t * k, t, s, k);
  multiply_count += bt * t * s * k;
  if (detail::want_grad(g, {&a, &b})) {
    out.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    g.record(out, {as, bs}, [as, bs, os, bt, t, s, k] {
      if (as->requires_grad) {
        if (as->grad.empty()) as->grad.assign(as->value.size(), T(0));
        for (int64_t i = 0; i < bt; ++i)  // dA = dC.B^T
          detail::gemm_nt_acc(os->grad.data() + i * t * k, bs->value.data() + i * s * k,
                              as->grad.data() + i * t * s, t, k, s);
      }
      if (bs->requires_grad) {
        if (bs->grad.empty()) bs->grad.assign(bs->value.size(), T(0));
        for (int64_t i = 0; i < bt; ++i)  // dB = A^T.dC
          detail::gemm_tn_acc(as->value.data() + i * t * s, os->grad.data() + i * t * k,
                              bs->grad.data() + i * s * k, s, t, k);
      }
    });
  }
  return out;
}

// Leading block along axis 0 (bias / positional tables). Forward copies;
// backward scatters into the leading block, so everything outside the slice
// keeps an exactly-zero gradient.
template <typename T>
Tensor<T> slice_axis0(Graph<T>& g, const Tensor<T>& x, int64_t n0) {
  if (n0 < 1 || n0 > x.dim(0))
    throw ShapeError(concat("slice extent ", n0, " out of range for ",
                            shape_str(x.shape())));
  Shape oshape = x.shape();
  oshape[0] = n0;
  const int64_t row = x.size() / x.dim(0);
  Tensor<T> out = Tensor<T>::zeros(oshape);
  std::memcpy(out.data(), x.data(), sizeof(T) * static_cast<size_t>(n0 * row));
  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os, n0, row] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (int64_t i = 0; i < n0 * row; ++i) xs->grad[i] += os->grad[i];
    });
  }
  return out;
}

// Leading blocks along axes 0 and 1 (weight slicing for slim layers).
template <typename T>
Tensor<T> slice_axes01(Graph<T>& g, const Tensor<T>& x, int64_t n0, int64_t n1) {
  if (x.ndim() < 2)
    throw ShapeError(concat("slice_axes01 needs rank >= 2, got ", shape_str(x.shape())));
  if (n0 < 1 || n0 > x.dim(0) || n1 < 1 || n1 > x.dim(1))
    throw ShapeError(concat("slice ", n0, "x", n1, " out of range for ",
                            shape_str(x.shape())));
  Shape oshape = x.shape();
  oshape[0] = n0;
  oshape[1] = n1;
  const int64_t d1 = x.dim(1);
  int64_t inner = 1;
  for (size_t i = 2; i < x.ndim(); ++i) inner *= x.dim(i);
  Tensor<T> out = Tensor<T>::zeros(oshape);
  for (int64_t i = 0; i < n0; ++i)
    std::memcpy(out.data() + i * n1 * inner, x.data() + i * d1 * inner,
                sizeof(T) * static_cast<size_t>(n1 * inner));
  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os, n0, n1, d1, inner] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (int64_t i = 0; i < n0; ++i) {
        const T* src = os->grad.data() + i * n1 * inner;
        T* dst = xs->grad.data() + i * d1 * inner;
        for (int64_t j = 0; j < n1 * inner; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// tokens[N,T,D] -> [N,T+1,D] with tok[D] broadcast into position 0.
template <typename T>
Tensor<T> prepend_token(Graph<T>& g, const Tensor<T>& tokens, const Tensor<T>& tok) {
  if (tokens.ndim() != 3 || tok.size() != tokens.dim(2))
    throw ShapeError(concat("prepend_token mismatch: ", shape_str(tokens.shape()),
                            " with ", shape_str(tok.shape())));
  const int64_t n = tokens.dim(0), t = tokens.dim(1), d = tokens.dim(2);
  Tensor<T> out = Tensor<T>::zeros({n, t + 1, d});
  for (int64_t b = 0; b < n; ++b) {
    std::memcpy(out.data() + b * (t + 1) * d, tok.data(), sizeof(T) * d);
    std::memcpy(out.data() + b * (t + 1) * d + d, tokens.data() + b * t * d,
                sizeof(T) * static_cast<size_t>(t * d));
  }
  if (detail::want_grad(g, {&tokens, &tok})) {
    out.set_requires_grad(true);
    auto ts = tokens.storage(), ks = tok.storage(), os = out.storage();
    g.record(out, {ts, ks}, [ts, ks, os, n, t, d] {
      if (ks->requires_grad) {
        if (ks->grad.empty()) ks->grad.assign(ks->value.size(), T(0));
        for (int64_t b = 0; b < n; ++b)
          for (int64_t j = 0; j < d; ++j)
            ks->grad[j] += os->grad[b * (t + 1) * d + j];
      }
      if (ts->requires_grad) {
        if (ts->grad.empty()) ts->grad.assign(ts->value.size(), T(0));
        for (int64_t b = 0; b < n; ++b)
          for (int64_t j = 0; j < t * d; ++j)
            ts->grad[b * t * d + j] += os->grad[b * (t + 1) * d + d + j];
      }
    });
  }
  return out;
}

// x[N,T,D] + rows[T,D] broadcast over the batch.
template <typename T>
Tensor<T> add_rows(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& rows) {
  if (x.ndim() != 3 || rows.ndim() != 2 || x.dim(1) != rows.dim(0) ||
      x.dim(2) != rows.dim(1))
    throw ShapeError(concat("add_rows mismatch: ", shape_str(x.shape()), " + ",
                            shape_str(rows.shape())));
  const int64_t n = x.dim(0), td = x.dim(1) * x.dim(2);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t j = 0; j < td; ++j)
      out.data()[b * td + j] = x.data()[b * td + j] + rows.data()[j];
  if (detail::want_grad(g, {&x, &rows})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), rs = rows.storage(), os = out.storage();
    g.record(out, {xs, rs}, [xs, rs, os, n, td] {
      if (xs->requires_grad) {
        if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
        for (size_t i = 0; i < xs->grad.size(); ++i) xs->grad[i] += os->grad[i];
      }
      if (rs->requires_grad) {
        if (rs->grad.empty()) rs->grad.assign(rs->value.size(), T(0));
        for (int64_t b = 0; b < n; ++b)
          for (int64_t j = 0; j < td; ++j) rs->grad[j] += os->grad[b * td + j];
      }
    });
  }
  return out;
}

// x[N,T,D] -> [N,D], picking token index t0.
template <typename T>
Tensor<T> select_token(Graph<T>& g, const Tensor<T>& x, int64_t t0) {
  if (x.ndim() != 3 || t0 < 0 || t0 >= x.dim(1))
    throw ShapeError(concat("select_token ", t0, " out of range for ",
                            shape_str(x.shape())));
  const int64_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
  Tensor<T> out = Tensor<T>::zeros({n, d});
  for (int64_t b = 0; b < n; ++b)
    std::memcpy(out.data() + b * d, x.data() + (b * t + t0) * d, sizeof(T) * d);
  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os, n, t, d, t0] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (int64_t b = 0; b < n; ++b)
        for (int64_t j = 0; j < d; ++j)
          xs->grad[(b * t + t0) * d + j] += os->grad[b * d + j];
    });
  }
  return out;
}

// x[N,C,H,W] -> [N,C] mean over spatial positions.
template <typename T>
Tensor<T> global_avg_pool(Graph<T>& g, const Tensor<T>& x) {
  if (x.ndim() != 4)
    throw ShapeError(concat("global_avg_pool expects NCHW, got ", shape_str(x.shape())));
  const int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out = Tensor<T>::zeros({n, c});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* p = x.data() + (b * c + ch) * plane;
      T acc = T(0);
      for (int64_t s = 0; s < plane; ++s) acc += p[s];
      out.data()[b * c + ch] = acc / static_cast<T>(plane);
    }
  if (detail::want_grad(g, {&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    g.record(out, {xs}, [xs, os, n, c, plane] {
      if (!xs->requires_grad) return;
      if (xs->grad.empty()) xs->grad.assign(xs->value.size(), T(0));
      for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
          T d = os->grad[b * c + ch] / static_cast<T>(plane);
          T* dx = xs->grad.data() + (b * c + ch) * plane;
          for (int64_t s = 0; s < plane; ++s) dx[s] += d;
        }
    });
  }
  return out;
}

}  // namespace ops
}  // namespace slnk
