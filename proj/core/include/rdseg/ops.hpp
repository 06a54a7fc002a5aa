#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rdseg/tensor.hpp"

// Forward kernels and their exact reverse-mode companions. All kernels are
// pure with respect to their inputs, run single-threaded, and accumulate in a
// fixed order, so identical inputs give bit-identical outputs run to run.
// Backward functions *accumulate* into their destination tensors; callers
// zero-initialise (or pass nullptr to skip a gradient).
namespace rdseg::ops {

namespace detail {

[[noreturn]] inline void fail(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution, stride 1, zero-padded "same". Kernel (c_out, c_in, k, k) with
// odd k (3x3 and 1x1 in practice); bias (1, c_out, 1, 1).
// ---------------------------------------------------------------------------

template <std::floating_point T>
void check_conv_shapes(const Tensor4<T>& x, const Tensor4<T>& kernel, const Tensor4<T>& bias) {
  if (kernel.shape.h != kernel.shape.w || kernel.shape.h % 2 == 0 || kernel.shape.h < 1) {
    detail::fail("conv2d", "kernel must be square with odd size, got " + kernel.shape.str());
  }
  if (kernel.shape.c != x.shape.c) {
    detail::fail("conv2d", "kernel input channels " + kernel.shape.str() +
                               " do not match input " + x.shape.str());
  }
  const Shape4 want_bias{1, kernel.shape.n, 1, 1};
  if (!(bias.shape == want_bias)) {
    detail::fail("conv2d", "bias shape " + bias.shape.str() + " must be " + want_bias.str());
  }
}

template <std::floating_point T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& kernel, const Tensor4<T>& bias) {
  check_conv_shapes(x, kernel, bias);
  const int n = x.shape.n, ci = x.shape.c, h = x.shape.h, w = x.shape.w;
  const int co = kernel.shape.n, k = kernel.shape.h, pad = k / 2;

  Tensor4<T> out({n, co, h, w});
  for (int in = 0; in < n; ++in) {
    for (int oc = 0; oc < co; ++oc) {
      T* out_plane = out.data.data() + out.index(in, oc, 0, 0);
      const T b = bias.data[static_cast<std::size_t>(oc)];
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) out_plane[i] = b;
      for (int ic = 0; ic < ci; ++ic) {
        const T* in_plane = x.data.data() + x.index(in, ic, 0, 0);
        for (int ky = 0; ky < k; ++ky) {
          const int y0 = std::max(0, pad - ky);
          const int y1 = std::min(h, h + pad - ky);
          for (int kx = 0; kx < k; ++kx) {
            const T wv = kernel.at(oc, ic, ky, kx);
            if (wv == T{0}) continue;
            const int x0 = std::max(0, pad - kx);
            const int x1 = std::min(w, w + pad - kx);
            const int dx = kx - pad;
            for (int y = y0; y < y1; ++y) {
              const T* src = in_plane + static_cast<std::int64_t>(y + ky - pad) * w + dx;
              T* dst = out_plane + static_cast<std::int64_t>(y) * w;
              for (int ox = x0; ox < x1; ++ox) dst[ox] += wv * src[ox];
            }
          }
        }
      }
    }
  }
  return out;
}

template <std::floating_point T>
void conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& kernel, const Tensor4<T>& grad_out,
                     Tensor4<T>* grad_x, Tensor4<T>* grad_kernel, Tensor4<T>* grad_bias) {
  const int n = x.shape.n, ci = x.shape.c, h = x.shape.h, w = x.shape.w;
  const int co = kernel.shape.n, k = kernel.shape.h, pad = k / 2;

  if (grad_bias) {
    for (int in = 0; in < n; ++in) {
      for (int oc = 0; oc < co; ++oc) {
        const T* g = grad_out.data.data() + grad_out.index(in, oc, 0, 0);
        T acc{0};
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) acc += g[i];
        grad_bias->data[static_cast<std::size_t>(oc)] += acc;
      }
    }
  }

  for (int in = 0; in < n; ++in) {
    for (int oc = 0; oc < co; ++oc) {
      const T* g_plane = grad_out.data.data() + grad_out.index(in, oc, 0, 0);
      for (int ic = 0; ic < ci; ++ic) {
        const T* in_plane = x.data.data() + x.index(in, ic, 0, 0);
        T* gx_plane = grad_x ? grad_x->data.data() + grad_x->index(in, ic, 0, 0) : nullptr;
        for (int ky = 0; ky < k; ++ky) {
          const int y0 = std::max(0, pad - ky);
          const int y1 = std::min(h, h + pad - ky);
          for (int kx = 0; kx < k; ++kx) {
            const int x0 = std::max(0, pad - kx);
            const int x1 = std::min(w, w + pad - kx);
            const int dx = kx - pad;
            const T wv = kernel.at(oc, ic, ky, kx);
            T wacc{0};
            for (int y = y0; y < y1; ++y) {
              const T* g_row = g_plane + static_cast<std::int64_t>(y) * w;
              const std::int64_t src_off = static_cast<std::int64_t>(y + ky - pad) * w + dx;
              if (gx_plane) {
                T* gx_row = gx_plane + src_off;
                for (int ox = x0; ox < x1; ++ox) gx_row[ox] += wv * g_row[ox];
              }
              if (grad_kernel) {
                const T* in_row = in_plane + src_off;
                for (int ox = x0; ox < x1; ++ox) wacc += g_row[ox] * in_row[ox];
              }
            }
            if (grad_kernel) grad_kernel->at(oc, ic, ky, kx) += wacc;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 2x2 max pooling on disjoint windows. Ties resolve to the first element in
// row-major scan order so the backward route is reproducible.
// ---------------------------------------------------------------------------

template <std::floating_point T>
struct PoolResult {
  Tensor4<T> out;
  std::vector<std::int64_t> argmax;  // flat index into the input, one per output element
};

template <std::floating_point T>
PoolResult<T> maxpool2x2(const Tensor4<T>& x) {
  if (x.shape.h % 2 != 0 || x.shape.w % 2 != 0) {
    detail::fail("maxpool2x2", "height and width must be even, got " + x.shape.str());
  }
  const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
  PoolResult<T> r{Tensor4<T>({n, c, h / 2, w / 2}), {}};
  r.argmax.resize(static_cast<std::size_t>(r.out.size()));

  std::int64_t o = 0;
  for (int in = 0; in < n; ++in) {
    for (int ic = 0; ic < c; ++ic) {
      for (int y = 0; y < h; y += 2) {
        for (int ox = 0; ox < w; ox += 2) {
          std::int64_t best_idx = x.index(in, ic, y, ox);
          T best = x.data[static_cast<std::size_t>(best_idx)];
          const std::int64_t cand[3] = {x.index(in, ic, y, ox + 1), x.index(in, ic, y + 1, ox),
                                        x.index(in, ic, y + 1, ox + 1)};
          for (std::int64_t idx : cand) {
            const T v = x.data[static_cast<std::size_t>(idx)];
            if (v > best) {
              best = v;
              best_idx = idx;
            }
          }
          r.out.data[static_cast<std::size_t>(o)] = best;
          r.argmax[static_cast<std::size_t>(o)] = best_idx;
          ++o;
        }
      }
    }
  }
  return r;
}

template <std::floating_point T>
void maxpool2x2_backward(const Tensor4<T>& grad_out, const std::vector<std::int64_t>& argmax,
                         Tensor4<T>& grad_x) {
  for (std::size_t o = 0; o < argmax.size(); ++o) {
    grad_x.data[static_cast<std::size_t>(argmax[o])] += grad_out.data[o];
  }
}

// ---------------------------------------------------------------------------
// Nearest-neighbour 2x upsampling; backward sums the four child adjoints.
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor4<T> upsample2x(const Tensor4<T>& x) {
  const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
  Tensor4<T> out({n, c, 2 * h, 2 * w});
  for (int in = 0; in < n; ++in) {
    for (int ic = 0; ic < c; ++ic) {
      for (int y = 0; y < h; ++y) {
        const T* src = x.data.data() + x.index(in, ic, y, 0);
        T* d0 = out.data.data() + out.index(in, ic, 2 * y, 0);
        T* d1 = out.data.data() + out.index(in, ic, 2 * y + 1, 0);
        for (int ox = 0; ox < w; ++ox) {
          d0[2 * ox] = d0[2 * ox + 1] = d1[2 * ox] = d1[2 * ox + 1] = src[ox];
        }
      }
    }
  }
  return out;
}

template <std::floating_point T>
void upsample2x_backward(const Tensor4<T>& grad_out, Tensor4<T>& grad_x) {
  const int n = grad_x.shape.n, c = grad_x.shape.c, h = grad_x.shape.h, w = grad_x.shape.w;
  for (int in = 0; in < n; ++in) {
    for (int ic = 0; ic < c; ++ic) {
      for (int y = 0; y < h; ++y) {
        const T* g0 = grad_out.data.data() + grad_out.index(in, ic, 2 * y, 0);
        const T* g1 = grad_out.data.data() + grad_out.index(in, ic, 2 * y + 1, 0);
        T* dst = grad_x.data.data() + grad_x.index(in, ic, y, 0);
        for (int ox = 0; ox < w; ++ox) {
          dst[ox] += g0[2 * ox] + g0[2 * ox + 1] + g1[2 * ox] + g1[2 * ox + 1];
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Channel concatenation, first operand's channels first.
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.shape.n != b.shape.n || a.shape.h != b.shape.h || a.shape.w != b.shape.w) {
    detail::fail("concat_channels",
                 "batch/spatial mismatch between " + a.shape.str() + " and " + b.shape.str());
  }
  const int n = a.shape.n, h = a.shape.h, w = a.shape.w;
  Tensor4<T> out({n, a.shape.c + b.shape.c, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int in = 0; in < n; ++in) {
    T* dst = out.data.data() + out.index(in, 0, 0, 0);
    const T* pa = a.data.data() + static_cast<std::int64_t>(in) * a.shape.c * plane;
    std::copy(pa, pa + static_cast<std::int64_t>(a.shape.c) * plane, dst);
    const T* pb = b.data.data() + static_cast<std::int64_t>(in) * b.shape.c * plane;
    std::copy(pb, pb + static_cast<std::int64_t>(b.shape.c) * plane,
              dst + static_cast<std::int64_t>(a.shape.c) * plane);
  }
  return out;
}

template <std::floating_point T>
void concat_channels_backward(const Tensor4<T>& grad_out, Tensor4<T>& grad_a, Tensor4<T>& grad_b) {
  const int n = grad_out.shape.n, h = grad_out.shape.h, w = grad_out.shape.w;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const int ca = grad_a.shape.c, cb = grad_b.shape.c;
  for (int in = 0; in < n; ++in) {
    const T* src = grad_out.data.data() + grad_out.index(in, 0, 0, 0);
    T* da = grad_a.data.data() + static_cast<std::int64_t>(in) * ca * plane;
    for (std::int64_t i = 0; i < ca * plane; ++i) da[i] += src[i];
    T* db = grad_b.data.data() + static_cast<std::int64_t>(in) * cb * plane;
    const T* srcb = src + ca * plane;
    for (std::int64_t i = 0; i < cb * plane; ++i) db[i] += srcb[i];
  }
}

// ---------------------------------------------------------------------------
// Batch normalization. Per-channel statistics over (n, h, w), population
// variance, running stats updated as r = momentum * r + (1 - momentum) * batch.
// ---------------------------------------------------------------------------

template <std::floating_point T>
struct BnCache {
  Tensor4<T> xhat;
  std::vector<T> inv_std;  // per channel
};

template <std::floating_point T>
void check_bn_shapes(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta) {
  const Shape4 want{1, x.shape.c, 1, 1};
  if (!(gamma.shape == want) || !(beta.shape == want)) {
    detail::fail("batch_norm", "gamma/beta must have shape " + want.str() + " for input " +
                                   x.shape.str());
  }
}

template <std::floating_point T>
Tensor4<T> batch_norm_train(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                            Tensor4<T>& running_mean, Tensor4<T>& running_var, T momentum, T eps,
                            BnCache<T>* cache) {
  check_bn_shapes(x, gamma, beta);
  const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
  const std::int64_t per_channel = static_cast<std::int64_t>(n) * h * w;
  if (per_channel < 2) {
    detail::fail("batch_norm", "train mode needs n*h*w >= 2 per channel, got " + x.shape.str());
  }

  Tensor4<T> out(x.shape);
  if (cache) {
    cache->xhat = Tensor4<T>(x.shape);
    cache->inv_std.assign(static_cast<std::size_t>(c), T{0});
  }
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int ic = 0; ic < c; ++ic) {
    T mean{0};
    for (int in = 0; in < n; ++in) {
      const T* src = x.data.data() + x.index(in, ic, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) mean += src[i];
    }
    mean /= static_cast<T>(per_channel);
    T var{0};
    for (int in = 0; in < n; ++in) {
      const T* src = x.data.data() + x.index(in, ic, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) {
        const T d = src[i] - mean;
        var += d * d;
      }
    }
    var /= static_cast<T>(per_channel);
    const T inv_std = T{1} / std::sqrt(var + eps);

    const T g = gamma.data[static_cast<std::size_t>(ic)];
    const T b = beta.data[static_cast<std::size_t>(ic)];
    for (int in = 0; in < n; ++in) {
      const T* src = x.data.data() + x.index(in, ic, 0, 0);
      T* dst = out.data.data() + out.index(in, ic, 0, 0);
      T* xh = cache ? cache->xhat.data.data() + cache->xhat.index(in, ic, 0, 0) : nullptr;
      for (std::int64_t i = 0; i < plane; ++i) {
        const T norm = (src[i] - mean) * inv_std;
        if (xh) xh[i] = norm;
        dst[i] = g * norm + b;
      }
    }
    if (cache) cache->inv_std[static_cast<std::size_t>(ic)] = inv_std;

    running_mean.data[static_cast<std::size_t>(ic)] =
        momentum * running_mean.data[static_cast<std::size_t>(ic)] + (T{1} - momentum) * mean;
    running_var.data[static_cast<std::size_t>(ic)] =
        momentum * running_var.data[static_cast<std::size_t>(ic)] + (T{1} - momentum) * var;
  }
  return out;
}

template <std::floating_point T>
Tensor4<T> batch_norm_infer(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                            const Tensor4<T>& running_mean, const Tensor4<T>& running_var, T eps) {
  check_bn_shapes(x, gamma, beta);
  const int n = x.shape.n, c = x.shape.c, h = x.shape.h, w = x.shape.w;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor4<T> out(x.shape);
  for (int ic = 0; ic < c; ++ic) {
    const T mean = running_mean.data[static_cast<std::size_t>(ic)];
    const T inv_std = T{1} / std::sqrt(running_var.data[static_cast<std::size_t>(ic)] + eps);
    const T g = gamma.data[static_cast<std::size_t>(ic)];
    const T b = beta.data[static_cast<std::size_t>(ic)];
    for (int in = 0; in < n; ++in) {
      const T* src = x.data.data() + x.index(in, ic, 0, 0);
      T* dst = out.data.data() + out.index(in, ic, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - mean) * inv_std + b;
    }
  }
  return out;
}

template <std::floating_point T>
void batch_norm_backward(const BnCache<T>& cache, const Tensor4<T>& gamma,
                         const Tensor4<T>& grad_out, Tensor4<T>* grad_x, Tensor4<T>* grad_gamma,
                         Tensor4<T>* grad_beta) {
  const Shape4 s = cache.xhat.shape;
  const int n = s.n, c = s.c;
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t m = static_cast<std::int64_t>(n) * plane;

  for (int ic = 0; ic < c; ++ic) {
    T sum_g{0}, sum_gx{0};
    for (int in = 0; in < n; ++in) {
      const T* g = grad_out.data.data() + grad_out.index(in, ic, 0, 0);
      const T* xh = cache.xhat.data.data() + cache.xhat.index(in, ic, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * xh[i];
      }
    }
    if (grad_gamma) grad_gamma->data[static_cast<std::size_t>(ic)] += sum_gx;
    if (grad_beta) grad_beta->data[static_cast<std::size_t>(ic)] += sum_g;
    if (grad_x) {
      const T gm = gamma.data[static_cast<std::size_t>(ic)];
      const T inv_std = cache.inv_std[static_cast<std::size_t>(ic)];
      const T scale = gm * inv_std / static_cast<T>(m);
      for (int in = 0; in < n; ++in) {
        const T* g = grad_out.data.data() + grad_out.index(in, ic, 0, 0);
        const T* xh = cache.xhat.data.data() + cache.xhat.index(in, ic, 0, 0);
        T* dst = grad_x->data.data() + grad_x->index(in, ic, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) {
          dst[i] += scale * (static_cast<T>(m) * g[i] - sum_g - xh[i] * sum_gx);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops. relu'(0) is defined as 0.
// ---------------------------------------------------------------------------

template <std::floating_point T>
Tensor4<T> relu(const Tensor4<T>& x) {
  Tensor4<T> out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > T{0} ? x.data[i] : T{0};
  return out;
}

template <std::floating_point T>
void relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out, Tensor4<T>& grad_x) {
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    if (x.data[i] > T{0}) grad_x.data[i] += grad_out.data[i];
  }
}

template <std::floating_point T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
  Tensor4<T> out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    out.data[i] = T{1} / (T{1} + std::exp(-x.data[i]));
  }
  return out;
}

template <std::floating_point T>
void sigmoid_backward(const Tensor4<T>& out, const Tensor4<T>& grad_out, Tensor4<T>& grad_x) {
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    grad_x.data[i] += grad_out.data[i] * out.data[i] * (T{1} - out.data[i]);
  }
}

template <std::floating_point T>
void check_same_shape(const char* op, const Tensor4<T>& a, const Tensor4<T>& b) {
  if (!(a.shape == b.shape)) {
    detail::fail(op, "shape mismatch between " + a.shape.str() + " and " + b.shape.str());
  }
}

template <std::floating_point T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  check_same_shape("add", a, b);
  Tensor4<T> out(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

template <std::floating_point T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b) {
  check_same_shape("mul", a, b);
  Tensor4<T> out(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

template <std::floating_point T>
T sum(const Tensor4<T>& x) {
  T acc{0};
  for (T v : x.data) acc += v;
  return acc;
}

// ---------------------------------------------------------------------------
// Soft dice. Per batch item: d = (2*sum(p*y) + smooth) / (sum(p) + sum(y) + smooth)
// over (c, h, w); loss = 1 - mean(d) across the batch.
// ---------------------------------------------------------------------------

template <std::floating_point T>
struct DiceResult {
  T loss;
  Tensor4<T> grad_pred;
};

template <std::floating_point T>
DiceResult<T> soft_dice(const Tensor4<T>& pred, const Tensor4<T>& target, T smooth) {
  check_same_shape("soft_dice", pred, target);
  const int n = pred.shape.n;
  if (n < 1) detail::fail("soft_dice", "empty batch");
  const std::int64_t item = pred.size() / n;

  DiceResult<T> r{T{0}, Tensor4<T>(pred.shape)};
  for (int in = 0; in < n; ++in) {
    const T* p = pred.data.data() + static_cast<std::int64_t>(in) * item;
    const T* y = target.data.data() + static_cast<std::int64_t>(in) * item;
    T inter{0}, sum_p{0}, sum_y{0};
    for (std::int64_t i = 0; i < item; ++i) {
      inter += p[i] * y[i];
      sum_p += p[i];
      sum_y += y[i];
    }
    const T denom = sum_p + sum_y + smooth;
    const T numer = T{2} * inter + smooth;
    r.loss += T{1} - numer / denom;

    T* g = r.grad_pred.data.data() + static_cast<std::int64_t>(in) * item;
    const T inv_n = T{1} / static_cast<T>(n);
    for (std::int64_t i = 0; i < item; ++i) {
      // d(dice)/dp_i = (2*y_i*denom - numer) / denom^2; loss contributes -d/n.
      g[i] = -inv_n * (T{2} * y[i] * denom - numer) / (denom * denom);
    }
  }
  r.loss /= static_cast<T>(n);
  return r;
}

}  // namespace rdseg::ops
