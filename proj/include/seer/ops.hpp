#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "seer/tensor.hpp"

namespace seer {

namespace detail {

template <typename T>
inline void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise ----------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  BasicTensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] + b.values()[i];
  if (taping_any<T>({&a, &b})) {
    out.set_tracked();
    auto ad = a.storage(), bd = b.storage(), od = out.storage();
    Tape<T>::current()->record([ad, bd, od, n] {
      if (ad->tracked)
        for (std::size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i];
      if (bd->tracked)
        for (std::size_t i = 0; i < n; ++i) bd->grad[i] += od->grad[i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  BasicTensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
  if (taping_any<T>({&a, &b})) {
    out.set_tracked();
    auto ad = a.storage(), bd = b.storage(), od = out.storage();
    Tape<T>::current()->record([ad, bd, od, n] {
      if (ad->tracked)
        for (std::size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i];
      if (bd->tracked)
        for (std::size_t i = 0; i < n; ++i) bd->grad[i] -= od->grad[i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  BasicTensor<T> out(a.shape());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
  if (taping_any<T>({&a, &b})) {
    out.set_tracked();
    auto ad = a.storage(), bd = b.storage(), od = out.storage();
    Tape<T>::current()->record([ad, bd, od, n] {
      if (ad->tracked)
        for (std::size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i] * bd->value[i];
      if (bd->tracked)
        for (std::size_t i = 0; i < n; ++i) bd->grad[i] += od->grad[i] * ad->value[i];
    });
  }
  return out;
}

// y = scale*x + shift with plain-number coefficients
template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, T scale, T shift) {
  BasicTensor<T> out(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = scale * x.values()[i] + shift;
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, scale, n] {
      for (std::size_t i = 0; i < n; ++i) xd->grad[i] += scale * od->grad[i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) {
    T v = x.values()[i];
    out.values()[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                : std::exp(v) / (T(1) + std::exp(v));
  }
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, n] {
      for (std::size_t i = 0; i < n; ++i) {
        T y = od->value[i];
        xd->grad[i] += od->grad[i] * y * (T(1) - y);
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> tanh_act(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = std::tanh(x.values()[i]);
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, n] {
      for (std::size_t i = 0; i < n; ++i) {
        T y = od->value[i];
        xd->grad[i] += od->grad[i] * (T(1) - y * y);
      }
    });
  }
  return out;
}

// ---- reductions -----------------------------------------------------------

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc = T(0);
  for (T v : x.values()) acc += v;
  BasicTensor<T> out = BasicTensor<T>::scalar(acc);
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od] {
      T g = od->grad[0];
      for (std::size_t i = 0; i < xd->value.size(); ++i) xd->grad[i] += g;
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return affine(sum(x), T(1) / static_cast<T>(x.numel()), T(0));
}

// flat inner product of two same-shape tensors
template <typename T>
BasicTensor<T> dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "dot");
  T acc = T(0);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) acc += a.values()[i] * b.values()[i];
  BasicTensor<T> out = BasicTensor<T>::scalar(acc);
  if (taping_any<T>({&a, &b})) {
    out.set_tracked();
    auto ad = a.storage(), bd = b.storage(), od = out.storage();
    Tape<T>::current()->record([ad, bd, od, n] {
      T g = od->grad[0];
      if (ad->tracked)
        for (std::size_t i = 0; i < n; ++i) ad->grad[i] += g * bd->value[i];
      if (bd->tracked)
        for (std::size_t i = 0; i < n; ++i) bd->grad[i] += g * ad->value[i];
    });
  }
  return out;
}

// ---- linear algebra -------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t M = a.extent(0), K = a.extent(1), N = b.extent(1);
  BasicTensor<T> out({M, N});
  const T* av = a.values().data();
  const T* bv = b.values().data();
  T* ov = out.values().data();
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      T aik = av[i * K + k];
      const T* brow = bv + k * N;
      T* orow = ov + i * N;
      for (std::size_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
    }
  if (taping_any<T>({&a, &b})) {
    out.set_tracked();
    auto ad = a.storage(), bd = b.storage(), od = out.storage();
    Tape<T>::current()->record([ad, bd, od, M, K, N] {
      if (ad->tracked) {
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < N; ++j) {
            T g = od->grad[i * N + j];
            for (std::size_t k = 0; k < K; ++k) ad->grad[i * K + k] += g * bd->value[k * N + j];
          }
      }
      if (bd->tracked) {
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t k = 0; k < K; ++k) {
            T av_ik = ad->value[i * K + k];
            for (std::size_t j = 0; j < N; ++j) bd->grad[k * N + j] += av_ik * od->grad[i * N + j];
          }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose: rank-2 tensor required, got " + shape_str(x.shape()));
  const std::size_t M = x.extent(0), N = x.extent(1);
  BasicTensor<T> out({N, M});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) out.values()[j * M + i] = x.values()[i * N + j];
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, M, N] {
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) xd->grad[i * N + j] += od->grad[j * M + i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  BasicTensor<T> out(std::move(shape), x.values());
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od] {
      for (std::size_t i = 0; i < xd->value.size(); ++i) xd->grad[i] += od->grad[i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> outer(const BasicTensor<T>& u, const BasicTensor<T>& v) {
  if (u.rank() != 1 || v.rank() != 1)
    throw DimensionError("outer: rank-1 operands required, got " + shape_str(u.shape()) + " and " + shape_str(v.shape()));
  const std::size_t M = u.extent(0), N = v.extent(0);
  BasicTensor<T> out({M, N});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) out.values()[i * N + j] = u.values()[i] * v.values()[j];
  if (taping_any<T>({&u, &v})) {
    out.set_tracked();
    auto ud = u.storage(), vd = v.storage(), od = out.storage();
    Tape<T>::current()->record([ud, vd, od, M, N] {
      if (ud->tracked)
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < N; ++j) ud->grad[i] += od->grad[i * N + j] * vd->value[j];
      if (vd->tracked)
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < N; ++j) vd->grad[j] += od->grad[i * N + j] * ud->value[i];
    });
  }
  return out;
}

// ---- shape surgery --------------------------------------------------------

// Concatenate along axis 0. Trailing extents must agree.
template <typename T>
BasicTensor<T> concat0(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat0: no inputs");
  Shape rest(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t lead = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank() ||
        !std::equal(rest.begin(), rest.end(), p.shape().begin() + 1))
      throw DimensionError("concat0: incompatible part shape " + shape_str(p.shape()));
    lead += p.extent(0);
  }
  Shape out_shape;
  out_shape.push_back(lead);
  out_shape.insert(out_shape.end(), rest.begin(), rest.end());
  BasicTensor<T> out(out_shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + off);
    off += p.numel();
  }
  bool any = false;
  for (const auto& p : parts)
    if (taping_any<T>({&p})) any = true;
  if (any) {
    out.set_tracked();
    std::vector<std::shared_ptr<TensorStorage<T>>> pds;
    for (const auto& p : parts) pds.push_back(p.storage());
    auto od = out.storage();
    Tape<T>::current()->record([pds, od] {
      std::size_t off = 0;
      for (const auto& pd : pds) {
        if (pd->tracked)
          for (std::size_t i = 0; i < pd->value.size(); ++i) pd->grad[i] += od->grad[off + i];
        off += pd->value.size();
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_cols(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(0) != b.extent(0))
    throw DimensionError("concat_cols: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t R = a.extent(0), Ca = a.extent(1), Cb = b.extent(1);
  BasicTensor<T> out({R, Ca + Cb});
  for (std::size_t i = 0; i < R; ++i) {
    std::copy_n(a.values().begin() + i * Ca, Ca, out.values().begin() + i * (Ca + Cb));
    std::copy_n(b.values().begin() + i * Cb, Cb, out.values().begin() + i * (Ca + Cb) + Ca);
  }
  if (taping_any<T>({&a, &b})) {
    out.set_tracked();
    auto ad = a.storage(), bd = b.storage(), od = out.storage();
    Tape<T>::current()->record([ad, bd, od, R, Ca, Cb] {
      for (std::size_t i = 0; i < R; ++i) {
        if (ad->tracked)
          for (std::size_t j = 0; j < Ca; ++j) ad->grad[i * Ca + j] += od->grad[i * (Ca + Cb) + j];
        if (bd->tracked)
          for (std::size_t j = 0; j < Cb; ++j) bd->grad[i * Cb + j] += od->grad[i * (Ca + Cb) + Ca + j];
      }
    });
  }
  return out;
}

// One-element tensors stacked into a vector.
template <typename T>
BasicTensor<T> stack_scalars(const std::vector<BasicTensor<T>>& xs) {
  if (xs.empty()) throw ContractError("stack_scalars: no inputs");
  BasicTensor<T> out({xs.size()});
  for (std::size_t i = 0; i < xs.size(); ++i) out.values()[i] = xs[i].item();
  bool any = false;
  for (const auto& x : xs)
    if (taping_any<T>({&x})) any = true;
  if (any) {
    out.set_tracked();
    std::vector<std::shared_ptr<TensorStorage<T>>> xds;
    for (const auto& x : xs) xds.push_back(x.storage());
    auto od = out.storage();
    Tape<T>::current()->record([xds, od] {
      for (std::size_t i = 0; i < xds.size(); ++i)
        if (xds[i]->tracked) xds[i]->grad[0] += od->grad[i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> index1d(const BasicTensor<T>& x, std::size_t i) {
  if (x.rank() != 1 || i >= x.extent(0))
    throw DimensionError("index1d: index " + std::to_string(i) + " into " + shape_str(x.shape()));
  BasicTensor<T> out = BasicTensor<T>::scalar(x.values()[i]);
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, i] { xd->grad[i] += od->grad[0]; });
  }
  return out;
}

// Select index i along axis 0 (rank drops by one).
template <typename T>
BasicTensor<T> slice0(const BasicTensor<T>& x, std::size_t i) {
  if (x.rank() < 1 || i >= x.extent(0))
    throw DimensionError("slice0: index " + std::to_string(i) + " into " + shape_str(x.shape()));
  Shape rest(x.shape().begin() + 1, x.shape().end());
  const std::size_t block = shape_numel(rest);
  BasicTensor<T> out(rest);
  std::copy_n(x.values().begin() + i * block, block, out.values().begin());
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, i, block] {
      for (std::size_t j = 0; j < block; ++j) xd->grad[i * block + j] += od->grad[j];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t r0, std::size_t r1) {
  if (x.rank() != 2 || r0 >= r1 || r1 > x.extent(0))
    throw DimensionError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " + shape_str(x.shape()));
  const std::size_t C = x.extent(1);
  BasicTensor<T> out({r1 - r0, C});
  std::copy_n(x.values().begin() + r0 * C, (r1 - r0) * C, out.values().begin());
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, r0, r1, C] {
      for (std::size_t i = 0; i < (r1 - r0) * C; ++i) xd->grad[r0 * C + i] += od->grad[i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t c0, std::size_t c1) {
  if (x.rank() != 2 || c0 >= c1 || c1 > x.extent(1))
    throw DimensionError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + shape_str(x.shape()));
  const std::size_t R = x.extent(0), C = x.extent(1), W = c1 - c0;
  BasicTensor<T> out({R, W});
  for (std::size_t i = 0; i < R; ++i)
    std::copy_n(x.values().begin() + i * C + c0, W, out.values().begin() + i * W);
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, R, C, c0, W] {
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < W; ++j) xd->grad[i * C + c0 + j] += od->grad[i * W + j];
    });
  }
  return out;
}

// Zero-pad a matrix at the bottom/right.
template <typename T>
BasicTensor<T> pad2d_zero(const BasicTensor<T>& x, std::size_t extra_rows, std::size_t extra_cols) {
  if (x.rank() != 2) throw DimensionError("pad2d_zero: rank-2 tensor required, got " + shape_str(x.shape()));
  const std::size_t R = x.extent(0), C = x.extent(1);
  BasicTensor<T> out({R + extra_rows, C + extra_cols});
  for (std::size_t i = 0; i < R; ++i)
    std::copy_n(x.values().begin() + i * C, C, out.values().begin() + i * (C + extra_cols));
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, R, C, extra_cols] {
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) xd->grad[i * C + j] += od->grad[i * (C + extra_cols) + j];
    });
  }
  return out;
}

// ---- broadcast helpers ----------------------------------------------------

// rows of x scaled by s: out[i,:] = s[i] * x[i,:]
template <typename T>
BasicTensor<T> scale_rows(const BasicTensor<T>& x, const BasicTensor<T>& s) {
  if (x.rank() != 2 || s.rank() != 1 || s.extent(0) != x.extent(0))
    throw DimensionError("scale_rows: " + shape_str(x.shape()) + " with " + shape_str(s.shape()));
  const std::size_t R = x.extent(0), C = x.extent(1);
  BasicTensor<T> out({R, C});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out.values()[i * C + j] = x.values()[i * C + j] * s.values()[i];
  if (taping_any<T>({&x, &s})) {
    out.set_tracked();
    auto xd = x.storage(), sd = s.storage(), od = out.storage();
    Tape<T>::current()->record([xd, sd, od, R, C] {
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) {
          T g = od->grad[i * C + j];
          if (xd->tracked) xd->grad[i * C + j] += g * sd->value[i];
          if (sd->tracked) sd->grad[i] += g * xd->value[i * C + j];
        }
    });
  }
  return out;
}

// x[D,H,W] * mask[1,H,W], mask broadcast over channels
template <typename T>
BasicTensor<T> mul_mask(const BasicTensor<T>& x, const BasicTensor<T>& m) {
  if (x.rank() != 3 || m.rank() != 3 || m.extent(0) != 1 || m.extent(1) != x.extent(1) || m.extent(2) != x.extent(2))
    throw DimensionError("mul_mask: " + shape_str(x.shape()) + " with mask " + shape_str(m.shape()));
  const std::size_t D = x.extent(0), HW = x.extent(1) * x.extent(2);
  BasicTensor<T> out(x.shape());
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t p = 0; p < HW; ++p) out.values()[d * HW + p] = x.values()[d * HW + p] * m.values()[p];
  if (taping_any<T>({&x, &m})) {
    out.set_tracked();
    auto xd = x.storage(), md = m.storage(), od = out.storage();
    Tape<T>::current()->record([xd, md, od, D, HW] {
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t p = 0; p < HW; ++p) {
          T g = od->grad[d * HW + p];
          if (xd->tracked) xd->grad[d * HW + p] += g * md->value[p];
          if (md->tracked) md->grad[p] += g * xd->value[d * HW + p];
        }
    });
  }
  return out;
}

// x scaled by a one-element tensor
template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& x, const BasicTensor<T>& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: scalar operand has shape " + shape_str(s.shape()));
  const std::size_t n = x.numel();
  BasicTensor<T> out(x.shape());
  T sv = s.values()[0];
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = x.values()[i] * sv;
  if (taping_any<T>({&x, &s})) {
    out.set_tracked();
    auto xd = x.storage(), sd = s.storage(), od = out.storage();
    Tape<T>::current()->record([xd, sd, od, n] {
      if (xd->tracked)
        for (std::size_t i = 0; i < n; ++i) xd->grad[i] += od->grad[i] * sd->value[0];
      if (sd->tracked)
        for (std::size_t i = 0; i < n; ++i) sd->grad[0] += od->grad[i] * xd->value[i];
    });
  }
  return out;
}

// out[i,:] = x[i,:] + b
template <typename T>
BasicTensor<T> add_rowvec(const BasicTensor<T>& x, const BasicTensor<T>& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.extent(0) != x.extent(1))
    throw DimensionError("add_rowvec: " + shape_str(x.shape()) + " with " + shape_str(b.shape()));
  const std::size_t R = x.extent(0), C = x.extent(1);
  BasicTensor<T> out({R, C});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out.values()[i * C + j] = x.values()[i * C + j] + b.values()[j];
  if (taping_any<T>({&x, &b})) {
    out.set_tracked();
    auto xd = x.storage(), bd = b.storage(), od = out.storage();
    Tape<T>::current()->record([xd, bd, od, R, C] {
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) {
          T g = od->grad[i * C + j];
          if (xd->tracked) xd->grad[i * C + j] += g;
          if (bd->tracked) bd->grad[j] += g;
        }
    });
  }
  return out;
}

// ---- normalization --------------------------------------------------------

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, int axis) {
  const int r = static_cast<int>(x.rank());
  if (axis < 0) axis += r;
  if (r == 0 || axis < 0 || axis >= r)
    throw DimensionError("softmax: axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t n = x.extent(static_cast<std::size_t>(axis));
  for (int i = 0; i < axis; ++i) outer *= x.extent(static_cast<std::size_t>(i));
  for (int i = axis + 1; i < r; ++i) inner *= x.extent(static_cast<std::size_t>(i));
  BasicTensor<T> out(x.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = x.values()[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, x.values()[base + k * inner]);
      T denom = T(0);
      for (std::size_t k = 0; k < n; ++k) {
        T e = std::exp(x.values()[base + k * inner] - mx);
        out.values()[base + k * inner] = e;
        denom += e;
      }
      for (std::size_t k = 0; k < n; ++k) out.values()[base + k * inner] /= denom;
    }
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, outer, inner, n] {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          T s = T(0);
          for (std::size_t k = 0; k < n; ++k) s += od->grad[base + k * inner] * od->value[base + k * inner];
          for (std::size_t k = 0; k < n; ++k)
            xd->grad[base + k * inner] += od->value[base + k * inner] * (od->grad[base + k * inner] - s);
        }
    });
  }
  return out;
}

// ---- convolution & pooling ------------------------------------------------

// Cross-correlation of x[C,H,W] with kernel[O,C,k,k] plus bias[O].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      int padding, int stride = 1) {
  if (x.rank() != 3 || kernel.rank() != 4)
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + ", kernel " + shape_str(kernel.shape()));
  const std::size_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
  const std::size_t O = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);
  if (kernel.extent(1) != C)
    throw DimensionError("conv2d: kernel channels " + std::to_string(kernel.extent(1)) + " vs input " + std::to_string(C));
  if (kh != kw || kh % 2 == 0) throw ConfigError("conv2d: kernel size must be odd square, got " + shape_str(kernel.shape()));
  if (bias.rank() != 1 || bias.extent(0) != O)
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(O) + " outputs");
  if (padding < 0 || stride < 1) throw ConfigError("conv2d: padding/stride out of range");
  const long Hl = static_cast<long>(H), Wl = static_cast<long>(W), k = static_cast<long>(kh);
  const long Ho = (Hl + 2 * padding - k) / stride + 1;
  const long Wo = (Wl + 2 * padding - k) / stride + 1;
  if (Ho < 1 || Wo < 1)
    throw DimensionError("conv2d: empty output for input " + shape_str(x.shape()) + " kernel " + shape_str(kernel.shape()));
  BasicTensor<T> out({O, static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});
  const T* xv = x.values().data();
  const T* kv = kernel.values().data();
  T* ov = out.values().data();
  for (std::size_t o = 0; o < O; ++o)
    for (long i = 0; i < Ho; ++i)
      for (long j = 0; j < Wo; ++j) {
        T acc = bias.values()[o];
        for (std::size_t c = 0; c < C; ++c)
          for (long di = 0; di < k; ++di) {
            const long ii = i * stride - padding + di;
            if (ii < 0 || ii >= Hl) continue;
            for (long dj = 0; dj < k; ++dj) {
              const long jj = j * stride - padding + dj;
              if (jj < 0 || jj >= Wl) continue;
              acc += xv[(c * H + ii) * W + jj] * kv[((o * C + c) * kh + di) * kw + dj];
            }
          }
        ov[(o * Ho + i) * Wo + j] = acc;
      }
  if (taping_any<T>({&x, &kernel, &bias})) {
    out.set_tracked();
    auto xd = x.storage(), kd = kernel.storage(), bd = bias.storage(), od = out.storage();
    const int pad = padding, str = stride;
    Tape<T>::current()->record([xd, kd, bd, od, C, H, W, O, kh, kw, Ho, Wo, pad, str] {
      const long k = static_cast<long>(kh), Hl = static_cast<long>(H), Wl = static_cast<long>(W);
      for (std::size_t o = 0; o < O; ++o)
        for (long i = 0; i < Ho; ++i)
          for (long j = 0; j < Wo; ++j) {
            const T g = od->grad[(o * Ho + i) * Wo + j];
            if (g == T(0)) continue;
            if (bd->tracked) bd->grad[o] += g;
            for (std::size_t c = 0; c < C; ++c)
              for (long di = 0; di < k; ++di) {
                const long ii = i * str - pad + di;
                if (ii < 0 || ii >= Hl) continue;
                for (long dj = 0; dj < k; ++dj) {
                  const long jj = j * str - pad + dj;
                  if (jj < 0 || jj >= Wl) continue;
                  const std::size_t xi = (c * H + ii) * W + jj;
                  const std::size_t ki = ((o * C + c) * kh + di) * kw + dj;
                  if (xd->tracked) xd->grad[xi] += g * kd->value[ki];
                  if (kd->tracked) kd->grad[ki] += g * xd->value[xi];
                }
              }
          }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mean_pool_channels(const BasicTensor<T>& x) {
  if (x.rank() != 3) throw DimensionError("mean_pool_channels: rank-3 tensor required, got " + shape_str(x.shape()));
  const std::size_t C = x.extent(0), HW = x.extent(1) * x.extent(2);
  BasicTensor<T> out({1, x.extent(1), x.extent(2)});
  for (std::size_t p = 0; p < HW; ++p) {
    T acc = T(0);
    for (std::size_t c = 0; c < C; ++c) acc += x.values()[c * HW + p];
    out.values()[p] = acc / static_cast<T>(C);
  }
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, C, HW] {
      for (std::size_t p = 0; p < HW; ++p) {
        T g = od->grad[p] / static_cast<T>(C);
        for (std::size_t c = 0; c < C; ++c) xd->grad[c * HW + p] += g;
      }
    });
  }
  return out;
}

// Channel max; gradient routes to the lowest-index argmax.
template <typename T>
BasicTensor<T> max_pool_channels(const BasicTensor<T>& x) {
  if (x.rank() != 3) throw DimensionError("max_pool_channels: rank-3 tensor required, got " + shape_str(x.shape()));
  const std::size_t C = x.extent(0), HW = x.extent(1) * x.extent(2);
  BasicTensor<T> out({1, x.extent(1), x.extent(2)});
  std::vector<std::size_t> amax(HW, 0);
  for (std::size_t p = 0; p < HW; ++p) {
    T best = x.values()[p];
    std::size_t bi = 0;
    for (std::size_t c = 1; c < C; ++c) {
      T v = x.values()[c * HW + p];
      if (v > best) {
        best = v;
        bi = c;
      }
    }
    out.values()[p] = best;
    amax[p] = bi;
  }
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, amax, HW] {
      for (std::size_t p = 0; p < HW; ++p) xd->grad[amax[p] * HW + p] += od->grad[p];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  if (x.rank() != 3) throw DimensionError("global_avg_pool: rank-3 tensor required, got " + shape_str(x.shape()));
  const std::size_t C = x.extent(0), HW = x.extent(1) * x.extent(2);
  BasicTensor<T> out({C});
  for (std::size_t c = 0; c < C; ++c) {
    T acc = T(0);
    for (std::size_t p = 0; p < HW; ++p) acc += x.values()[c * HW + p];
    out.values()[c] = acc / static_cast<T>(HW);
  }
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, C, HW] {
      for (std::size_t c = 0; c < C; ++c) {
        T g = od->grad[c] / static_cast<T>(HW);
        for (std::size_t p = 0; p < HW; ++p) xd->grad[c * HW + p] += g;
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mean_rows(const BasicTensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("mean_rows: rank-2 tensor required, got " + shape_str(x.shape()));
  const std::size_t R = x.extent(0), C = x.extent(1);
  BasicTensor<T> out({C});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out.values()[j] += x.values()[i * C + j];
  for (std::size_t j = 0; j < C; ++j) out.values()[j] /= static_cast<T>(R);
  if (taping_any<T>({&x})) {
    out.set_tracked();
    auto xd = x.storage(), od = out.storage();
    Tape<T>::current()->record([xd, od, R, C] {
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) xd->grad[i * C + j] += od->grad[j] / static_cast<T>(R);
    });
  }
  return out;
}

// ---- losses ----------------------------------------------------------------

// Mean over the batch of w[y_i] * (-log softmax(logits_i)[y_i]). Empty
// weights means uniform. Stable log-sum-exp evaluation.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, const std::vector<int>& labels,
                             const std::vector<T>& class_weights = {}) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [B,C], got " + shape_str(logits.shape()));
  const std::size_t B = logits.extent(0), C = logits.extent(1);
  if (labels.size() != B) throw DataError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " + std::to_string(B));
  if (!class_weights.empty() && class_weights.size() != C)
    throw DataError("cross_entropy: weight vector length " + std::to_string(class_weights.size()) + " for " + std::to_string(C) + " classes");
  std::vector<T> probs(B * C);
  T total = T(0);
  for (std::size_t i = 0; i < B; ++i) {
    int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw DataError("cross_entropy: label " + std::to_string(y) + " out of range [0," + std::to_string(C) + ")");
    const T* row = logits.values().data() + i * C;
    T mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    T denom = T(0);
    for (std::size_t c = 0; c < C; ++c) denom += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < C; ++c) probs[i * C + c] = std::exp(row[c] - mx) / denom;
    T w = class_weights.empty() ? T(1) : class_weights[static_cast<std::size_t>(y)];
    total += w * (std::log(denom) + mx - row[static_cast<std::size_t>(y)]);
  }
  BasicTensor<T> out = BasicTensor<T>::scalar(total / static_cast<T>(B));
  if (taping_any<T>({&logits})) {
    out.set_tracked();
    auto ld = logits.storage(), od = out.storage();
    auto w = class_weights;
    Tape<T>::current()->record([ld, od, probs, labels, w, B, C] {
      const T g = od->grad[0] / static_cast<T>(B);
      for (std::size_t i = 0; i < B; ++i) {
        const std::size_t y = static_cast<std::size_t>(labels[i]);
        const T wi = w.empty() ? T(1) : w[y];
        for (std::size_t c = 0; c < C; ++c)
          ld->grad[i * C + c] += g * wi * (probs[i * C + c] - (c == y ? T(1) : T(0)));
      }
    });
  }
  return out;
}

}  // namespace seer
