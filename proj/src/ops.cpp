/*
 * Copyright 2026 The refseq Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "refseq/ops.hpp"

#include <cmath>
#include <cstring>

#include "refseq/kernels.hpp"

namespace refseq::ops {

namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->tracked() || t->requires_grad()) return true;
  return false;
}

bool wants_grad(const Tensor& t) { return t.tracked() || t.requires_grad(); }

void check_finite(const char* op, const Tensor& t) {
  const int64_t bad = kernels::find_nonfinite(t.data(), t.size());
  if (bad >= 0)
    throw NumericsError(std::string(op) + ": non-finite value at flat index " +
                        std::to_string(bad) + " in output " + shape_str(t.shape()));
}

Tensor finish(const char* op, Tensor out, bool track, std::function<void()> backfn) {
  check_finite(op, out);
  if (track) {
    out.mark_tracked();
    Tape::active()->push(op, out, std::move(backfn));
  }
  return out;
}

// dst[off .. off+n) += src[0 .. n)
void axpy_at(std::vector<float>& dst, int64_t off, const float* src, int64_t n) {
  float* d = dst.data() + off;
  for (int64_t i = 0; i < n; ++i) d[i] += src[i];
}

struct BroadcastDims {
  int64_t outer;
  int64_t inner;
};

// b must equal a trailing suffix of a's shape (or the full shape).
BroadcastDims broadcast_dims(const char* op, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size())
    throw ShapeError(std::string(op) + ": shapes " + shape_str(sa) + " vs " + shape_str(sb));
  const size_t off = sa.size() - sb.size();
  for (size_t i = 0; i < sb.size(); ++i)
    if (sa[off + i] != sb[i])
      throw ShapeError(std::string(op) + ": trailing dims differ, " + shape_str(sa) + " vs " +
                       shape_str(sb));
  const int64_t inner = numel(sb);
  return {a.size() / inner, inner};
}

struct MatmulDims {
  int B, m, k, n;
};

MatmulDims matmul_dims(const char* op, const Tensor& a, const Tensor& b, bool b_transposed) {
  if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3)))
    throw ShapeError(std::string(op) + ": ranks must both be 2 or both 3, got " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const bool batched = a.rank() == 3;
  MatmulDims d;
  d.B = batched ? a.dim(0) : 1;
  d.m = a.dim(batched ? 1 : 0);
  d.k = a.dim(batched ? 2 : 1);
  const int b0 = b.dim(batched ? 1 : 0), b1 = b.dim(batched ? 2 : 1);
  const int kb = b_transposed ? b1 : b0;
  d.n = b_transposed ? b0 : b1;
  if (d.k != kb || (batched && b.dim(0) != d.B))
    throw ShapeError(std::string(op) + ": inner dims differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const MatmulDims d = matmul_dims("matmul", a, b, false);
  const bool batched = a.rank() == 3;
  Tensor out = Tensor::zeros(batched ? Shape{d.B, d.m, d.n} : Shape{d.m, d.n});
  const int64_t sa = static_cast<int64_t>(d.m) * d.k, sb = static_cast<int64_t>(d.k) * d.n,
                so = static_cast<int64_t>(d.m) * d.n;
  for (int bi = 0; bi < d.B; ++bi)
    kernels::matmul_nn(a.data() + bi * sa, b.data() + bi * sb, out.data() + bi * so,
                       d.m, d.k, d.n);

  const bool track = tracking({&a, &b});
  Tensor av = a, bv = b, ov = out;
  return finish("matmul", out, track, [av, bv, ov, d, sa, sb, so]() mutable {
    const float* dy = ov.grad().data();
    if (wants_grad(av)) {
      auto& ga = av.grad_buffer();
      std::vector<float> tmp(static_cast<size_t>(sa));
      for (int bi = 0; bi < d.B; ++bi) {
        // da = dy [m,n] x b[k,n]^T
        kernels::matmul_nt(dy + bi * so, bv.data() + bi * sb, tmp.data(), d.m, d.n, d.k);
        axpy_at(ga, bi * sa, tmp.data(), sa);
      }
    }
    if (wants_grad(bv)) {
      auto& gb = bv.grad_buffer();
      std::vector<float> tmp(static_cast<size_t>(sb));
      for (int bi = 0; bi < d.B; ++bi) {
        // db = a[m,k]^T x dy [m,n]
        kernels::matmul_tn(av.data() + bi * sa, dy + bi * so, tmp.data(), d.k, d.m, d.n);
        axpy_at(gb, bi * sb, tmp.data(), sb);
      }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const MatmulDims d = matmul_dims("matmul_nt", a, b, true);
  const bool batched = a.rank() == 3;
  Tensor out = Tensor::zeros(batched ? Shape{d.B, d.m, d.n} : Shape{d.m, d.n});
  const int64_t sa = static_cast<int64_t>(d.m) * d.k, sb = static_cast<int64_t>(d.n) * d.k,
                so = static_cast<int64_t>(d.m) * d.n;
  for (int bi = 0; bi < d.B; ++bi)
    kernels::matmul_nt(a.data() + bi * sa, b.data() + bi * sb, out.data() + bi * so,
                       d.m, d.k, d.n);

  const bool track = tracking({&a, &b});
  Tensor av = a, bv = b, ov = out;
  return finish("matmul_nt", out, track, [av, bv, ov, d, sa, sb, so]() mutable {
    const float* dy = ov.grad().data();
    if (wants_grad(av)) {
      auto& ga = av.grad_buffer();
      std::vector<float> tmp(static_cast<size_t>(sa));
      for (int bi = 0; bi < d.B; ++bi) {
        // da = dy [m,n] x b [n,k]
        kernels::matmul_nn(dy + bi * so, bv.data() + bi * sb, tmp.data(), d.m, d.n, d.k);
        axpy_at(ga, bi * sa, tmp.data(), sa);
      }
    }
    if (wants_grad(bv)) {
      auto& gb = bv.grad_buffer();
      std::vector<float> tmp(static_cast<size_t>(sb));
      for (int bi = 0; bi < d.B; ++bi) {
        // db = dy^T [n,m] x a [m,k]
        kernels::matmul_tn(dy + bi * so, av.data() + bi * sa, tmp.data(), d.n, d.m, d.k);
        axpy_at(gb, bi * sb, tmp.data(), sb);
      }
    }
  });
}

namespace {

enum class EwKind { Add, Sub, Mul };

Tensor elementwise(const char* op, EwKind kind, const Tensor& a, const Tensor& b) {
  const BroadcastDims bd = broadcast_dims(op, a, b);
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  switch (kind) {
    case EwKind::Add:
      kernels::add_broadcast(pa, pb, po, bd.outer, bd.inner);
      break;
    case EwKind::Sub:
      for (int64_t i = 0; i < bd.outer; ++i)
        for (int64_t j = 0; j < bd.inner; ++j)
          po[i * bd.inner + j] = pa[i * bd.inner + j] - pb[j];
      break;
    case EwKind::Mul:
      kernels::mul_broadcast(pa, pb, po, bd.outer, bd.inner);
      break;
  }

  if (out.size() == 1 && a.raw()->has_scalar_f64 && b.raw()->has_scalar_f64) {
    const double x = a.item_double(), y = b.item_double();
    out.set_scalar_f64(kind == EwKind::Add ? x + y : kind == EwKind::Sub ? x - y : x * y);
  }

  const bool track = tracking({&a, &b});
  Tensor av = a, bv = b, ov = out;
  return finish(op, out, track, [av, bv, ov, bd, kind]() mutable {
    const float* dy = ov.grad().data();
    const int64_t n = ov.size();
    if (wants_grad(av)) {
      auto& ga = av.grad_buffer();
      if (kind == EwKind::Mul) {
        const float* pb = bv.data();
        for (int64_t i = 0; i < bd.outer; ++i)
          for (int64_t j = 0; j < bd.inner; ++j)
            ga[i * bd.inner + j] += dy[i * bd.inner + j] * pb[j];
      } else {
        axpy_at(ga, 0, dy, n);
      }
    }
    if (wants_grad(bv)) {
      auto& gb = bv.grad_buffer();
      const float* pa = av.data();
      const float sgn = kind == EwKind::Sub ? -1.f : 1.f;
      for (int64_t i = 0; i < bd.outer; ++i)
        for (int64_t j = 0; j < bd.inner; ++j) {
          const float g = dy[i * bd.inner + j];
          gb[j] += kind == EwKind::Mul ? g * pa[i * bd.inner + j] : sgn * g;
        }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise("add", EwKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise("sub", EwKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise("mul", EwKind::Mul, a, b); }

Tensor scale(const Tensor& a, float s) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  if (n == 1 && a.raw()->has_scalar_f64) out.set_scalar_f64(a.item_double() * s);

  const bool track = tracking({&a});
  Tensor av = a, ov = out;
  return finish("scale", out, track, [av, ov, s, n]() mutable {
    if (!wants_grad(av)) return;
    auto& ga = av.grad_buffer();
    const float* dy = ov.grad().data();
    for (int64_t i = 0; i < n; ++i) ga[i] += dy[i] * s;
  });
}

namespace {

// Copy with the last two axes swapped; shared by transpose fwd/bwd.
void swap_last2(const float* src, float* dst, int64_t batch, int r, int c) {
  for (int64_t b = 0; b < batch; ++b) {
    const float* s = src + b * r * c;
    float* d = dst + b * r * c;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) d[static_cast<int64_t>(j) * r + i] = s[static_cast<int64_t>(i) * c + j];
  }
}

}  // namespace

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2)
    throw ShapeError("transpose: rank must be >= 2, got " + shape_str(a.shape()));
  Shape os = a.shape();
  const int r = os[os.size() - 2], c = os[os.size() - 1];
  std::swap(os[os.size() - 2], os[os.size() - 1]);
  const int64_t batch = a.size() / (static_cast<int64_t>(r) * c);
  Tensor out = Tensor::zeros(os);
  swap_last2(a.data(), out.data(), batch, r, c);

  const bool track = tracking({&a});
  Tensor av = a, ov = out;
  return finish("transpose", out, track, [av, ov, batch, r, c]() mutable {
    if (!wants_grad(av)) return;
    auto& ga = av.grad_buffer();
    std::vector<float> tmp(ga.size());
    swap_last2(ov.grad().data(), tmp.data(), batch, c, r);
    axpy_at(ga, 0, tmp.data(), static_cast<int64_t>(tmp.size()));
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor out = Tensor::from_data(std::move(shape), a.values());

  const bool track = tracking({&a});
  Tensor av = a, ov = out;
  return finish("reshape", out, track, [av, ov]() mutable {
    if (!wants_grad(av)) return;
    axpy_at(av.grad_buffer(), 0, ov.grad().data(), ov.size());
  });
}

namespace {

struct AxisDims {
  int64_t outer;
  int mid;
  int64_t inner;
};

AxisDims axis_dims(const char* op, const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  AxisDims d{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) d.outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) d.inner *= s[i];
  return d;
}

}  // namespace

Tensor slice(const Tensor& a, int axis, int start, int len) {
  const AxisDims d = axis_dims("slice", a.shape(), axis);
  if (start < 0 || len <= 0 || start + len > d.mid)
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  Shape os = a.shape();
  os[axis] = len;
  Tensor out = Tensor::zeros(os);
  const float* pa = a.data();
  float* po = out.data();
  for (int64_t o = 0; o < d.outer; ++o)
    std::memcpy(po + o * len * d.inner, pa + (o * d.mid + start) * d.inner,
                sizeof(float) * static_cast<size_t>(len) * d.inner);

  const bool track = tracking({&a});
  Tensor av = a, ov = out;
  return finish("slice", out, track, [av, ov, d, start, len]() mutable {
    if (!wants_grad(av)) return;
    auto& ga = av.grad_buffer();
    const float* dy = ov.grad().data();
    for (int64_t o = 0; o < d.outer; ++o)
      axpy_at(ga, (o * d.mid + start) * d.inner, dy + o * len * d.inner,
              static_cast<int64_t>(len) * d.inner);
  });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: empty input list");
  Shape os = xs[0].shape();
  const AxisDims d0 = axis_dims("concat", os, axis);
  int total = 0;
  for (const Tensor& x : xs) {
    if (x.rank() != static_cast<int>(os.size()))
      throw ShapeError("concat: rank mismatch " + shape_str(x.shape()));
    for (int i = 0; i < x.rank(); ++i)
      if (i != axis && x.dim(i) != os[i])
        throw ShapeError("concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(os));
    total += x.dim(axis);
  }
  os[axis] = total;
  Tensor out = Tensor::zeros(os);
  float* po = out.data();
  int written = 0;
  for (const Tensor& x : xs) {
    const int mid = x.dim(axis);
    const float* px = x.data();
    for (int64_t o = 0; o < d0.outer; ++o)
      std::memcpy(po + (o * total + written) * d0.inner, px + o * mid * d0.inner,
                  sizeof(float) * static_cast<size_t>(mid) * d0.inner);
    written += mid;
  }

  bool track = false;
  if (Tape::active())
    for (const Tensor& x : xs)
      if (x.tracked() || x.requires_grad()) track = true;

  std::vector<Tensor> xv = xs;
  Tensor ov = out;
  return finish("concat", out, track, [xv, ov, d0, total]() mutable {
    const float* dy = ov.grad().data();
    int written = 0;
    for (Tensor& x : xv) {
      const int mid = static_cast<int>(x.size() / (d0.outer * d0.inner));
      if (wants_grad(x)) {
        auto& gx = x.grad_buffer();
        for (int64_t o = 0; o < d0.outer; ++o)
          axpy_at(gx, o * mid * d0.inner, dy + (o * total + written) * d0.inner,
                  static_cast<int64_t>(mid) * d0.inner);
      }
      written += mid;
    }
  });
}

Tensor split_heads(const Tensor& a, int n_heads) {
  if (a.rank() != 3)
    throw ShapeError("split_heads: expected rank 3, got " + shape_str(a.shape()));
  const int B = a.dim(0), L = a.dim(1), D = a.dim(2);
  if (D % n_heads != 0)
    throw ShapeError("split_heads: model dim " + std::to_string(D) +
                     " not divisible by heads " + std::to_string(n_heads));
  const int dh = D / n_heads;
  Tensor out = Tensor::zeros({B * n_heads, L, dh});
  const float* pa = a.data();
  float* po = out.data();
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l)
      for (int h = 0; h < n_heads; ++h)
        std::memcpy(po + ((static_cast<int64_t>(b) * n_heads + h) * L + l) * dh,
                    pa + (static_cast<int64_t>(b) * L + l) * D + static_cast<int64_t>(h) * dh,
                    sizeof(float) * static_cast<size_t>(dh));

  const bool track = tracking({&a});
  Tensor av = a, ov = out;
  return finish("split_heads", out, track, [av, ov, B, L, D, n_heads, dh]() mutable {
    if (!wants_grad(av)) return;
    auto& ga = av.grad_buffer();
    const float* dy = ov.grad().data();
    for (int b = 0; b < B; ++b)
      for (int l = 0; l < L; ++l)
        for (int h = 0; h < n_heads; ++h)
          axpy_at(ga, (static_cast<int64_t>(b) * L + l) * D + static_cast<int64_t>(h) * dh,
                  dy + ((static_cast<int64_t>(b) * n_heads + h) * L + l) * dh, dh);
  });
}

Tensor merge_heads(const Tensor& a, int n_heads, int batch) {
  if (a.rank() != 3 || a.dim(0) != batch * n_heads)
    throw ShapeError("merge_heads: expected [" + std::to_string(batch * n_heads) +
                     ",L,dh], got " + shape_str(a.shape()));
  const int L = a.dim(1), dh = a.dim(2);
  const int D = n_heads * dh;
  Tensor out = Tensor::zeros({batch, L, D});
  const float* pa = a.data();
  float* po = out.data();
  for (int b = 0; b < batch; ++b)
    for (int l = 0; l < L; ++l)
      for (int h = 0; h < n_heads; ++h)
        std::memcpy(po + (static_cast<int64_t>(b) * L + l) * D + static_cast<int64_t>(h) * dh,
                    pa + ((static_cast<int64_t>(b) * n_heads + h) * L + l) * dh,
                    sizeof(float) * static_cast<size_t>(dh));

  const bool track = tracking({&a});
  Tensor av = a, ov = out;
  return finish("merge_heads", out, track, [av, ov, batch, L, D, n_heads, dh]() mutable {
    if (!wants_grad(av)) return;
    auto& ga = av.grad_buffer();
    const float* dy = ov.grad().data();
    for (int b = 0; b < batch; ++b)
      for (int l = 0; l < L; ++l)
        for (int h = 0; h < n_heads; ++h)
          axpy_at(ga, ((static_cast<int64_t>(b) * n_heads + h) * L + l) * dh,
                  dy + (static_cast<int64_t>(b) * L + l) * D + static_cast<int64_t>(h) * dh, dh);
  });
}

namespace {

Tensor softmax_impl(const char* op, const Tensor& a,
                    std::shared_ptr<const std::vector<uint8_t>> mask, int n_heads) {
  if (a.rank() < 1) throw ShapeError(std::string(op) + ": rank must be >= 1");
  const int cols = a.dim(a.rank() - 1);
  const int64_t rows = a.size() / cols;
  Tensor out = Tensor::zeros(a.shape());
  if (!mask) {
    kernels::softmax_rows(a.data(), nullptr, out.data(), rows, cols);
  } else {
    // mask covers rows/n_heads row groups; each group repeats per head
    if (a.rank() != 4)
      throw ShapeError(std::string(op) + ": masked form expects [B,H,Lq,Lk], got " +
                       shape_str(a.shape()));
    const int B = a.dim(0), H = a.dim(1), Lq = a.dim(2), Lk = a.dim(3);
    if (H != n_heads || static_cast<int64_t>(mask->size()) != static_cast<int64_t>(B) * Lq * Lk)
      throw ShapeError(std::string(op) + ": mask size " + std::to_string(mask->size()) +
                       " does not match scores " + shape_str(a.shape()));
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < H; ++h)
        kernels::softmax_rows(a.data() + ((static_cast<int64_t>(b) * H + h) * Lq) * Lk,
                              mask->data() + static_cast<int64_t>(b) * Lq * Lk,
                              out.data() + ((static_cast<int64_t>(b) * H + h) * Lq) * Lk, Lq, Lk);
  }

  const bool track = tracking({&a});
  Tensor av = a, ov = out;
  return finish(op, out, track, [av, ov, rows, cols]() mutable {
    if (!wants_grad(av)) return;
    kernels::softmax_rows_bwd(ov.data(), ov.grad().data(), av.grad_buffer().data(), rows, cols);
  });
}

}  // namespace

Tensor softmax_last(const Tensor& a) { return softmax_impl("softmax", a, nullptr, 0); }

Tensor masked_softmax_heads(const Tensor& scores,
                            std::shared_ptr<const std::vector<uint8_t>> mask, int n_heads) {
  if (!mask) throw ShapeError("masked_softmax: null mask");
  return softmax_impl("masked_softmax", scores, std::move(mask), n_heads);
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, float eps) {
  if (a.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
  const int cols = a.dim(a.rank() - 1);
  if (gamma.rank() != 1 || gamma.dim(0) != cols || beta.rank() != 1 || beta.dim(0) != cols)
    throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match last dim of " +
                     shape_str(a.shape()));
  const int64_t rows = a.size() / cols;
  Tensor out = Tensor::zeros(a.shape());
  auto mean = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
  auto rstd = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
  kernels::layernorm_fwd(a.data(), gamma.data(), beta.data(), out.data(), mean->data(),
                         rstd->data(), rows, cols, eps);

  const bool track = tracking({&a, &gamma, &beta});
  Tensor av = a, gv = gamma, bv = beta, ov = out;
  return finish("layer_norm", out, track, [av, gv, bv, ov, mean, rstd, rows, cols]() mutable {
    const float* dy = ov.grad().data();
    // dgamma/dbeta are cheap; compute them into scratch even when unused.
    std::vector<float> dgamma(static_cast<size_t>(cols), 0.f);
    std::vector<float> dbeta(static_cast<size_t>(cols), 0.f);
    std::vector<float> dx_scratch;
    float* dx = nullptr;
    if (wants_grad(av)) {
      dx = av.grad_buffer().data();
    } else {
      dx_scratch.assign(av.size(), 0.f);
      dx = dx_scratch.data();
    }
    kernels::layernorm_bwd(av.data(), gv.data(), mean->data(), rstd->data(), dy, dx,
                           dgamma.data(), dbeta.data(), rows, cols);
    if (wants_grad(gv)) axpy_at(gv.grad_buffer(), 0, dgamma.data(), cols);
    if (wants_grad(bv)) axpy_at(bv.grad_buffer(), 0, dbeta.data(), cols);
  });
}

Tensor gelu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  kernels::gelu_fwd(a.data(), out.data(), a.size());
  const bool track = tracking({&a});
  Tensor av = a, ov = out;
  return finish("gelu", out, track, [av, ov]() mutable {
    if (!wants_grad(av)) return;
    kernels::gelu_bwd(av.data(), ov.grad().data(), av.grad_buffer().data(), av.size());
  });
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  kernels::sigmoid_fwd(a.data(), out.data(), a.size());
  const bool track = tracking({&a});
  Tensor av = a, ov = out;
  return finish("sigmoid", out, track, [av, ov]() mutable {
    if (!wants_grad(av)) return;
    auto& ga = av.grad_buffer();
    const float* y = ov.data();
    const float* dy = ov.grad().data();
    const int64_t n = ov.size();
    for (int64_t i = 0; i < n; ++i) ga[i] += dy[i] * y[i] * (1.f - y[i]);
  });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2)
    throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  const int V = table.dim(0), dim = table.dim(1);
  for (size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || ids[i] >= V)
      throw RangeError("embedding: id " + std::to_string(ids[i]) + " at position " +
                       std::to_string(i) + " outside table of " + std::to_string(V) + " rows");
  const int n = static_cast<int>(ids.size());
  Tensor out = Tensor::zeros({n, dim});
  kernels::gather_rows(table.data(), ids.data(), out.data(), n, dim);

  const bool track = tracking({&table});
  Tensor tv = table, ov = out;
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return finish("embedding", out, track, [tv, ov, ids_copy, n, dim]() mutable {
    if (!wants_grad(tv)) return;
    kernels::scatter_add_rows(tv.grad_buffer().data(), ids_copy->data(), ov.grad().data(), n,
                              dim);
  });
}

namespace {

struct ConvDims {
  int B, C, H, W, O, kh, kw, ho, wo;
};

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d: expected x [B,C,H,W] and w [O,C,kh,kw], got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  ConvDims d;
  d.B = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.O = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  if (w.dim(1) != d.C)
    throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(w.shape()));
  if (bias.rank() != 1 || bias.dim(0) != d.O)
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " must be [O]");
  d.ho = (d.H + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.W + 2 * pad - d.kw) / stride + 1;
  if (d.ho <= 0 || d.wo <= 0)
    throw ShapeError("conv2d: empty output for input " + shape_str(x.shape()));

  const int ck = d.C * d.kh * d.kw;
  const int64_t plane = static_cast<int64_t>(d.ho) * d.wo;
  Tensor out = Tensor::zeros({d.B, d.O, d.ho, d.wo});
  auto cols_all = std::make_shared<std::vector<float>>(static_cast<size_t>(d.B) * ck * plane);
  const int64_t xs = static_cast<int64_t>(d.C) * d.H * d.W;
  const int64_t os = static_cast<int64_t>(d.O) * plane;
  for (int b = 0; b < d.B; ++b) {
    float* cols = cols_all->data() + static_cast<int64_t>(b) * ck * plane;
    kernels::im2col(x.data() + b * xs, cols, d.C, d.H, d.W, d.kh, d.kw, stride, pad, d.ho, d.wo);
    float* yb = out.data() + b * os;
    kernels::matmul_nn(w.data(), cols, yb, d.O, ck, static_cast<int>(plane));
    for (int o = 0; o < d.O; ++o) {
      const float bv = bias.data()[o];
      float* row = yb + static_cast<int64_t>(o) * plane;
      for (int64_t p = 0; p < plane; ++p) row[p] += bv;
    }
  }

  const bool track = tracking({&x, &w, &bias});
  Tensor xv = x, wv = w, bv2 = bias, ov = out;
  return finish("conv2d", out, track,
                [xv, wv, bv2, ov, cols_all, d, ck, plane, xs, os, stride, pad]() mutable {
    const float* dy = ov.grad().data();
    if (wants_grad(wv)) {
      auto& gw = wv.grad_buffer();
      std::vector<float> tmp(static_cast<size_t>(d.O) * ck);
      for (int b = 0; b < d.B; ++b) {
        kernels::matmul_nt(dy + b * os, cols_all->data() + static_cast<int64_t>(b) * ck * plane,
                           tmp.data(), d.O, static_cast<int>(plane), ck);
        axpy_at(gw, 0, tmp.data(), static_cast<int64_t>(d.O) * ck);
      }
    }
    if (wants_grad(bv2)) {
      auto& gb = bv2.grad_buffer();
      for (int b = 0; b < d.B; ++b)
        for (int o = 0; o < d.O; ++o)
          gb[o] += static_cast<float>(
              kernels::reduce_sum(dy + b * os + static_cast<int64_t>(o) * plane, plane));
    }
    if (wants_grad(xv)) {
      auto& gx = xv.grad_buffer();
      std::vector<float> dcols(static_cast<size_t>(ck) * plane);
      for (int b = 0; b < d.B; ++b) {
        kernels::matmul_tn(wv.data(), dy + b * os, dcols.data(), ck, d.O,
                           static_cast<int>(plane));
        kernels::col2im(dcols.data(), gx.data() + b * xs, d.C, d.H, d.W, d.kh, d.kw, stride,
                        pad, d.ho, d.wo);
      }
    }
  });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv_transpose2d: expected x [B,C,H,W] and w [C,O,kh,kw], got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const int B = x.dim(0), C = x.dim(1), Hi = x.dim(2), Wi = x.dim(3);
  const int O = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(0) != C)
    throw ShapeError("conv_transpose2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(w.shape()));
  if (bias.rank() != 1 || bias.dim(0) != O)
    throw ShapeError("conv_transpose2d: bias " + shape_str(bias.shape()) + " must be [O]");
  const int Ho = (Hi - 1) * stride + kh - 2 * pad;
  const int Wo = (Wi - 1) * stride + kw - 2 * pad;
  if (Ho <= 0 || Wo <= 0)
    throw ShapeError("conv_transpose2d: empty output for input " + shape_str(x.shape()));

  const int okk = O * kh * kw;
  const int64_t plane_in = static_cast<int64_t>(Hi) * Wi;
  const int64_t xs = static_cast<int64_t>(C) * plane_in;
  const int64_t os = static_cast<int64_t>(O) * Ho * Wo;
  Tensor out = Tensor::zeros({B, O, Ho, Wo});
  std::vector<float> cols(static_cast<size_t>(okk) * plane_in);
  for (int b = 0; b < B; ++b) {
    // cols[okk, Hi*Wi] = w[C,okk]^T x x_b[C, Hi*Wi]
    kernels::matmul_tn(w.data(), x.data() + b * xs, cols.data(), okk, C,
                       static_cast<int>(plane_in));
    float* yb = out.data() + b * os;
    kernels::col2im(cols.data(), yb, O, Ho, Wo, kh, kw, stride, pad, Hi, Wi);
    for (int o = 0; o < O; ++o) {
      const float bvv = bias.data()[o];
      float* row = yb + static_cast<int64_t>(o) * Ho * Wo;
      for (int64_t p = 0; p < static_cast<int64_t>(Ho) * Wo; ++p) row[p] += bvv;
    }
  }

  const bool track = tracking({&x, &w, &bias});
  Tensor xv = x, wv = w, bv2 = bias, ov = out;
  return finish("conv_transpose2d", out, track,
                [xv, wv, bv2, ov, B, C, O, Hi, Wi, Ho, Wo, kh, kw, okk, plane_in, xs, os,
                 stride, pad]() mutable {
    const float* dy = ov.grad().data();
    std::vector<float> dcols(static_cast<size_t>(okk) * plane_in);
    for (int b = 0; b < B; ++b) {
      // dcols = im2col(dy_b) under the forward's col2im geometry
      kernels::im2col(dy + b * os, dcols.data(), O, Ho, Wo, kh, kw, stride, pad, Hi, Wi);
      if (wants_grad(xv)) {
        auto& gx = xv.grad_buffer();
        std::vector<float> tmp(static_cast<size_t>(C) * plane_in);
        kernels::matmul_nn(wv.data(), dcols.data(), tmp.data(), C, okk,
                           static_cast<int>(plane_in));
        axpy_at(gx, b * xs, tmp.data(), xs);
      }
      if (wants_grad(wv)) {
        auto& gw = wv.grad_buffer();
        std::vector<float> tmp(static_cast<size_t>(C) * okk);
        kernels::matmul_nt(xv.data() + b * xs, dcols.data(), tmp.data(), C,
                           static_cast<int>(plane_in), okk);
        axpy_at(gw, 0, tmp.data(), static_cast<int64_t>(C) * okk);
      }
    }
    if (wants_grad(bv2)) {
      auto& gb = bv2.grad_buffer();
      for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
          gb[o] += static_cast<float>(kernels::reduce_sum(
              dy + b * os + static_cast<int64_t>(o) * Ho * Wo, static_cast<int64_t>(Ho) * Wo));
    }
  });
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets,
                            int ignore_index) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy: logits must be [N,V], got " + shape_str(logits.shape()));
  const int N = logits.dim(0), V = logits.dim(1);
  if (static_cast<int>(targets.size()) != N)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(N) + " rows");
  int count = 0;
  for (int i = 0; i < N; ++i) {
    if (targets[i] == ignore_index) continue;
    if (targets[i] < 0 || targets[i] >= V)
      throw RangeError("cross_entropy: target " + std::to_string(targets[i]) + " at row " +
                       std::to_string(i) + " outside vocab of " + std::to_string(V));
    ++count;
  }
  if (count == 0) throw ShapeError("cross_entropy: every target is ignored");

  double total = 0.0;
  const float* pl = logits.data();
  for (int i = 0; i < N; ++i) {
    if (targets[i] == ignore_index) continue;
    const float* row = pl + static_cast<int64_t>(i) * V;
    float mx = row[0];
    for (int j = 1; j < V; ++j) mx = row[j] > mx ? row[j] : mx;
    double se = 0.0;
    for (int j = 0; j < V; ++j) se += std::exp(static_cast<double>(row[j]) - mx);
    total += (mx + std::log(se)) - row[targets[i]];
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / count));
  out.set_scalar_f64(total / count);

  const bool track = tracking({&logits});
  Tensor lv = logits, ov = out;
  auto tgt = std::make_shared<std::vector<int>>(targets);
  return finish("cross_entropy", out, track, [lv, ov, tgt, N, V, count, ignore_index]() mutable {
    if (!wants_grad(lv)) return;
    const float dL = ov.grad()[0] / static_cast<float>(count);
    auto& gl = lv.grad_buffer();
    const float* pl = lv.data();
    for (int i = 0; i < N; ++i) {
      if ((*tgt)[i] == ignore_index) continue;
      const float* row = pl + static_cast<int64_t>(i) * V;
      float* grow = gl.data() + static_cast<int64_t>(i) * V;
      float mx = row[0];
      for (int j = 1; j < V; ++j) mx = row[j] > mx ? row[j] : mx;
      double se = 0.0;
      for (int j = 0; j < V; ++j) se += std::exp(static_cast<double>(row[j]) - mx);
      const double inv = 1.0 / se;
      for (int j = 0; j < V; ++j) {
        const float p = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) * inv);
        grow[j] += dL * (p - (j == (*tgt)[i] ? 1.f : 0.f));
      }
    }
  });
}

Tensor binary_cross_entropy(const Tensor& probs, const Tensor& targets) {
  if (probs.shape() != targets.shape())
    throw ShapeError("binary_cross_entropy: shapes differ, " + shape_str(probs.shape()) +
                     " vs " + shape_str(targets.shape()));
  const int64_t n = probs.size();
  constexpr float kEps = 1e-7f;
  const float* pp = probs.data();
  const float* pt = targets.data();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double p = std::min(std::max(pp[i], kEps), 1.f - kEps);
    total -= pt[i] * std::log(p) + (1.0 - pt[i]) * std::log(1.0 - p);
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));
  out.set_scalar_f64(total / static_cast<double>(n));

  const bool track = tracking({&probs, &targets});
  Tensor pv = probs, tv = targets, ov = out;
  return finish("binary_cross_entropy", out, track, [pv, tv, ov, n]() mutable {
    if (!wants_grad(pv)) return;
    const float dL = ov.grad()[0] / static_cast<float>(n);
    auto& gp = pv.grad_buffer();
    const float* pp = pv.data();
    const float* pt = tv.data();
    constexpr float kEps = 1e-7f;
    for (int64_t i = 0; i < n; ++i) {
      const float p = std::min(std::max(pp[i], kEps), 1.f - kEps);
      gp[i] += dL * (p - pt[i]) / (p * (1.f - p));
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape())
    throw ShapeError("bce_with_logits: shapes differ, " + shape_str(logits.shape()) + " vs " +
                     shape_str(targets.shape()));
  const int64_t n = logits.size();
  const float* px = logits.data();
  const float* pt = targets.data();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double x = px[i];
    total += std::max(x, 0.0) - x * pt[i] + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));
  out.set_scalar_f64(total / static_cast<double>(n));

  const bool track = tracking({&logits, &targets});
  Tensor xv = logits, tv = targets, ov = out;
  return finish("bce_with_logits", out, track, [xv, tv, ov, n]() mutable {
    if (!wants_grad(xv)) return;
    const float dL = ov.grad()[0] / static_cast<float>(n);
    auto& gx = xv.grad_buffer();
    const float* px = xv.data();
    const float* pt = tv.data();
    for (int64_t i = 0; i < n; ++i) {
      const float s = 1.f / (1.f + std::exp(-px[i]));
      gx[i] += dL * (s - pt[i]);
    }
  });
}

namespace {

Tensor reduce_impl(const char* op, const Tensor& a, bool take_mean) {
  const int64_t n = a.size();
  const double s = kernels::reduce_sum(a.data(), n);
  const double value = take_mean ? s / static_cast<double>(n) : s;
  Tensor out = Tensor::scalar(static_cast<float>(value));
  out.set_scalar_f64(value);
  const bool track = tracking({&a});
  Tensor av = a, ov = out;
  return finish(op, out, track, [av, ov, n, take_mean]() mutable {
    if (!wants_grad(av)) return;
    const float g = ov.grad()[0] * (take_mean ? 1.f / static_cast<float>(n) : 1.f);
    auto& ga = av.grad_buffer();
    for (int64_t i = 0; i < n; ++i) ga[i] += g;
  });
}

}  // namespace

Tensor sum(const Tensor& a) { return reduce_impl("sum", a, false); }
Tensor mean(const Tensor& a) { return reduce_impl("mean", a, true); }

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mse: shapes differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const int64_t n = a.size();
  const float* pa = a.data();
  const float* pb = b.data();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    total += d * d;
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));
  out.set_scalar_f64(total / static_cast<double>(n));

  const bool track = tracking({&a, &b});
  Tensor av = a, bv = b, ov = out;
  return finish("mse", out, track, [av, bv, ov, n]() mutable {
    const float dL = ov.grad()[0] * 2.f / static_cast<float>(n);
    const float* pa = av.data();
    const float* pb = bv.data();
    if (wants_grad(av)) {
      auto& ga = av.grad_buffer();
      for (int64_t i = 0; i < n; ++i) ga[i] += dL * (pa[i] - pb[i]);
    }
    if (wants_grad(bv)) {
      auto& gb = bv.grad_buffer();
      for (int64_t i = 0; i < n; ++i) gb[i] -= dL * (pa[i] - pb[i]);
    }
  });
}

Tensor detach(const Tensor& a) { return a.detach(); }

}  // namespace refseq::ops
