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

// OpenMP kernels. Parallelism is only over independent output rows/elements;
// the per-row arithmetic lives in kernels_inner.hpp and is shared with the
// serial reference, so results do not depend on the thread count.

#include "refseq/kernels.hpp"

#include <cmath>

#include "kernels_inner.hpp"

namespace refseq::kernels {

using namespace refseq::kernels::inner;

namespace {
// Threading a tiny loop costs more than it saves.
constexpr int64_t kParallelCutoff = 4096;
}  // namespace

void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n) {
  const int64_t work = static_cast<int64_t>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int i = 0; i < m; ++i)
    matmul_nn_row(a + static_cast<int64_t>(i) * k, b, c + static_cast<int64_t>(i) * n, k, n);
}

void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n) {
  const int64_t work = static_cast<int64_t>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<int64_t>(i) * k;
    float* crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) crow[j] = dot(arow, b + static_cast<int64_t>(j) * k, k);
  }
}

void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n) {
  const int64_t work = static_cast<int64_t>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelCutoff)
  for (int i = 0; i < m; ++i)
    matmul_tn_row(a, b, c + static_cast<int64_t>(i) * n, i, m, k, n);
}

void add_broadcast(const float* a, const float* b, float* out, int64_t outer, int64_t inner) {
#pragma omp parallel for schedule(static) if (outer * inner > kParallelCutoff)
  for (int64_t i = 0; i < outer; ++i) {
    const float* ar = a + i * inner;
    float* orow = out + i * inner;
    for (int64_t j = 0; j < inner; ++j) orow[j] = ar[j] + b[j];
  }
}

void mul_broadcast(const float* a, const float* b, float* out, int64_t outer, int64_t inner) {
#pragma omp parallel for schedule(static) if (outer * inner > kParallelCutoff)
  for (int64_t i = 0; i < outer; ++i) {
    const float* ar = a + i * inner;
    float* orow = out + i * inner;
    for (int64_t j = 0; j < inner; ++j) orow[j] = ar[j] * b[j];
  }
}

void gelu_fwd(const float* x, float* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
  for (int64_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}

void gelu_bwd(const float* x, const float* dy, float* dx, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
  for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * gelu_grad_one(x[i]);
}

void sigmoid_fwd(const float* x, float* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
  for (int64_t i = 0; i < n; ++i) y[i] = 1.f / (1.f + std::exp(-x[i]));
}

void softmax_rows(const float* x, const uint8_t* mask, float* y, int64_t rows, int cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelCutoff)
  for (int64_t r = 0; r < rows; ++r)
    softmax_row(x + r * cols, mask ? mask + r * cols : nullptr, y + r * cols, cols);
}

void softmax_rows_bwd(const float* y, const float* dy, float* dx, int64_t rows, int cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelCutoff)
  for (int64_t r = 0; r < rows; ++r) {
    const float* yr = y + r * cols;
    const float* dyr = dy + r * cols;
    float* dxr = dx + r * cols;
    double dotv = 0.0;
    for (int j = 0; j < cols; ++j) dotv += static_cast<double>(yr[j]) * dyr[j];
    const float d = static_cast<float>(dotv);
    for (int j = 0; j < cols; ++j) dxr[j] += yr[j] * (dyr[j] - d);
  }
}

void layernorm_fwd(const float* x, const float* gamma, const float* beta, float* y,
                   float* mean, float* rstd, int64_t rows, int cols, float eps) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelCutoff)
  for (int64_t r = 0; r < rows; ++r)
    layernorm_row(x + r * cols, gamma, beta, y + r * cols, mean + r, rstd + r, cols, eps);
}

void layernorm_bwd(const float* x, const float* gamma, const float* mean, const float* rstd,
                   const float* dy, float* dx, float* dgamma, float* dbeta,
                   int64_t rows, int cols) {
  // dx rows are independent; dgamma/dbeta reduce over rows and stay serial so
  // the accumulation order is fixed.
#pragma omp parallel for schedule(static) if (rows * cols > kParallelCutoff)
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x + r * cols;
    const float* dyr = dy + r * cols;
    float* dxr = dx + r * cols;
    const float mu = mean[r];
    const float rs = rstd[r];
    double sum_g = 0.0, sum_gx = 0.0;
    for (int j = 0; j < cols; ++j) {
      const float xhat = (xr[j] - mu) * rs;
      const float g = dyr[j] * gamma[j];
      sum_g += g;
      sum_gx += static_cast<double>(g) * xhat;
    }
    const float mg = static_cast<float>(sum_g / cols);
    const float mgx = static_cast<float>(sum_gx / cols);
    for (int j = 0; j < cols; ++j) {
      const float xhat = (xr[j] - mu) * rs;
      const float g = dyr[j] * gamma[j];
      dxr[j] += (g - mg - xhat * mgx) * rs;
    }
  }
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x + r * cols;
    const float* dyr = dy + r * cols;
    const float mu = mean[r];
    const float rs = rstd[r];
    for (int j = 0; j < cols; ++j) {
      dgamma[j] += dyr[j] * (xr[j] - mu) * rs;
      dbeta[j] += dyr[j];
    }
  }
}

void im2col(const float* img, float* cols, int c, int h, int w,
            int kh, int kw, int stride, int pad, int ho, int wo) {
  const int64_t plane = static_cast<int64_t>(ho) * wo;
  const int strips = c * kh * kw;
#pragma omp parallel for schedule(static) if (strips * plane > kParallelCutoff)
  for (int s = 0; s < strips; ++s) {
    const int ch = s / (kh * kw);
    const int ki = (s / kw) % kh;
    const int kj = s % kw;
    im2col_strip(img, cols + static_cast<int64_t>(s) * plane, ch, ki, kj,
                 h, w, stride, pad, ho, wo);
  }
}

void col2im(const float* cols, float* img, int c, int h, int w,
            int kh, int kw, int stride, int pad, int ho, int wo) {
  const int64_t plane = static_cast<int64_t>(ho) * wo;
  // Output channels are disjoint across ch, so parallelizing over ch is safe;
  // within a channel the scatter order is the serial one.
#pragma omp parallel for schedule(static) if (c * kh * kw * plane > kParallelCutoff)
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const float* src = cols + ((static_cast<int64_t>(ch) * kh + ki) * kw + kj) * plane;
        for (int oi = 0; oi < ho; ++oi) {
          const int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) continue;
          for (int oj = 0; oj < wo; ++oj) {
            const int jj = oj * stride + kj - pad;
            if (jj < 0 || jj >= w) continue;
            img[(static_cast<int64_t>(ch) * h + ii) * w + jj] +=
                src[static_cast<int64_t>(oi) * wo + oj];
          }
        }
      }
    }
  }
}

void gather_rows(const float* table, const int* ids, float* out, int64_t n, int dim) {
#pragma omp parallel for schedule(static) if (n * dim > kParallelCutoff)
  for (int64_t i = 0; i < n; ++i) {
    const float* src = table + static_cast<int64_t>(ids[i]) * dim;
    float* dst = out + i * dim;
    for (int j = 0; j < dim; ++j) dst[j] = src[j];
  }
}

void scatter_add_rows(float* dtable, const int* ids, const float* dout, int64_t n, int dim) {
  // Duplicate ids require a fixed accumulation order; keep this serial.
  for (int64_t i = 0; i < n; ++i) {
    float* dst = dtable + static_cast<int64_t>(ids[i]) * dim;
    const float* src = dout + i * dim;
    for (int j = 0; j < dim; ++j) dst[j] += src[j];
  }
}

int64_t find_nonfinite(const float* x, int64_t n) {
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i])) return i;
  return -1;
}

double reduce_sum(const float* x, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

void adam_update(float* p, const float* g, float* m, float* v, int64_t n,
                 float lr, float beta1, float beta2, float eps, long t) {
  const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(t));
#pragma omp parallel for schedule(static) if (n > kParallelCutoff)
  for (int64_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.f - beta2) * g[i] * g[i];
    const float mhat = static_cast<float>(m[i] / bc1);
    const float vhat = static_cast<float>(v[i] / bc2);
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace refseq::kernels
