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
#pragma once

// Per-row / per-element inner routines shared by the serial reference kernels
// and the OpenMP kernels. A row is always produced by one call with a fixed
// accumulation order, so the two kernel sets agree bit-for-bit.

#include <cmath>
#include <cstdint>

namespace refseq::kernels::inner {

// Dot product with 4 independent partial sums combined in a fixed order.
inline float dot(const float* a, const float* b, int k) {
  float s0 = 0.f, s1 = 0.f, s2 = 0.f, s3 = 0.f;
  int i = 0;
  for (; i + 4 <= k; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < k; ++i) s0 += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3));
}

// crow[0..n) = sum_l a_row[l] * b[l,:]
inline void matmul_nn_row(const float* arow, const float* b, float* crow, int k, int n) {
  for (int j = 0; j < n; ++j) crow[j] = 0.f;
  for (int l = 0; l < k; ++l) {
    const float av = arow[l];
    const float* brow = b + static_cast<int64_t>(l) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

// crow[0..n) = sum_l a[l,i] * b[l,:]  for fixed output row i of a^T b
inline void matmul_tn_row(const float* a, const float* b, float* crow, int i,
                          int m, int k, int n) {
  for (int j = 0; j < n; ++j) crow[j] = 0.f;
  for (int l = 0; l < k; ++l) {
    const float av = a[static_cast<int64_t>(l) * m + i];
    const float* brow = b + static_cast<int64_t>(l) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void softmax_row(const float* xr, const uint8_t* mr, float* yr, int cols) {
  float mx = -3.4e38f;
  for (int j = 0; j < cols; ++j)
    if (!mr || mr[j]) mx = xr[j] > mx ? xr[j] : mx;
  double sum = 0.0;
  for (int j = 0; j < cols; ++j) {
    if (!mr || mr[j]) {
      const float e = std::exp(xr[j] - mx);
      yr[j] = e;
      sum += e;
    } else {
      yr[j] = 0.f;
    }
  }
  const float inv = static_cast<float>(1.0 / sum);
  for (int j = 0; j < cols; ++j) yr[j] *= inv;
}

inline void layernorm_row(const float* xr, const float* gamma, const float* beta,
                          float* yr, float* mean, float* rstd, int cols, float eps) {
  double s = 0.0;
  for (int j = 0; j < cols; ++j) s += xr[j];
  const float mu = static_cast<float>(s / cols);
  double v = 0.0;
  for (int j = 0; j < cols; ++j) {
    const double d = xr[j] - mu;
    v += d * d;
  }
  const float rs = static_cast<float>(1.0 / std::sqrt(v / cols + eps));
  *mean = mu;
  *rstd = rs;
  for (int j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
}

// tanh-approximation gelu
inline float gelu_one(float v) {
  const float u = 0.7978845608028654f * (v + 0.044715f * v * v * v);
  return 0.5f * v * (1.f + std::tanh(u));
}

inline float gelu_grad_one(float v) {
  const float c = 0.7978845608028654f;
  const float u = c * (v + 0.044715f * v * v * v);
  const float t = std::tanh(u);
  const float du = c * (1.f + 3.f * 0.044715f * v * v);
  return 0.5f * (1.f + t) + 0.5f * v * (1.f - t * t) * du;
}

// One channel/kernel-cell strip of im2col.
inline void im2col_strip(const float* img, float* dst, int ch, int ki, int kj,
                         int h, int w, int stride, int pad, int ho, int wo) {
  for (int oi = 0; oi < ho; ++oi) {
    const int ii = oi * stride + ki - pad;
    for (int oj = 0; oj < wo; ++oj) {
      const int jj = oj * stride + kj - pad;
      dst[static_cast<int64_t>(oi) * wo + oj] =
          (ii >= 0 && ii < h && jj >= 0 && jj < w)
              ? img[(static_cast<int64_t>(ch) * h + ii) * w + jj]
              : 0.f;
    }
  }
}

}  // namespace refseq::kernels::inner
