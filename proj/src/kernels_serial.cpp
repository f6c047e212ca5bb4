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

// Reference kernels: the OpenMP set must reproduce these bit-for-bit
// (test_kernels_parity), and bench_kernels times the two against each other.

#include "refseq/kernels.hpp"

#include "kernels_inner.hpp"

namespace refseq::kernels::serial {

using namespace refseq::kernels::inner;

void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    matmul_nn_row(a + static_cast<int64_t>(i) * k, b, c + static_cast<int64_t>(i) * n, k, n);
}

void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<int64_t>(i) * k;
    float* crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) crow[j] = dot(arow, b + static_cast<int64_t>(j) * k, k);
  }
}

void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    matmul_tn_row(a, b, c + static_cast<int64_t>(i) * n, i, m, k, n);
}

void softmax_rows(const float* x, const uint8_t* mask, float* y, int64_t rows, int cols) {
  for (int64_t r = 0; r < rows; ++r)
    softmax_row(x + r * cols, mask ? mask + r * cols : nullptr, y + r * cols, cols);
}

void layernorm_fwd(const float* x, const float* gamma, const float* beta, float* y,
                   float* mean, float* rstd, int64_t rows, int cols, float eps) {
  for (int64_t r = 0; r < rows; ++r)
    layernorm_row(x + r * cols, gamma, beta, y + r * cols, mean + r, rstd + r, cols, eps);
}

void gelu_fwd(const float* x, float* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}

void im2col(const float* img, float* cols, int c, int h, int w,
            int kh, int kw, int stride, int pad, int ho, int wo) {
  const int64_t plane = static_cast<int64_t>(ho) * wo;
  for (int ch = 0; ch < c; ++ch)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj)
        im2col_strip(img, cols + ((static_cast<int64_t>(ch) * kh + ki) * kw + kj) * plane,
                     ch, ki, kj, h, w, stride, pad, ho, wo);
}

void col2im(const float* cols, float* img, int c, int h, int w,
            int kh, int kw, int stride, int pad, int ho, int wo) {
  const int64_t plane = static_cast<int64_t>(ho) * wo;
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

}  // namespace refseq::kernels::serial
